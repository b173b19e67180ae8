//! Entropy core: target distributions, Shannon entropy, the imposed
//! prediction distribution and cross-entropy. All logarithms are natural,
//! so every quantity is in nats.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casegen::{EvalCase, Setup};
use crate::ingest::{Dataset, Domain};
use crate::promptio::{ParseStatus, RankedResponse};
use crate::scalar::Scalar;

/// Number of ranked picks a model is asked for.
pub const TOP_N: usize = 10;

/// Floor applied to the log argument in [`cross_entropy`].
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("all candidate frequencies are zero")]
    ZeroMass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("candidate position {0} picked twice")]
    DuplicatePick(usize),
    #[error("pick {0} is outside the candidate list")]
    PickOutOfRange(usize),
}

/// Probability vector aligned to a case's candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> Distribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, MetricsError> {
        if probs.is_empty() {
            return Err(MetricsError::Invalid("empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < T::zero()) {
            return Err(MetricsError::Invalid(format!("entry {bad} is negative or not finite")));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::sum_tolerance(probs.len()) {
            return Err(MetricsError::Invalid(format!("entries sum to {total}")));
        }
        Ok(Distribution { probs })
    }

    /// Normalized non-negative counts.
    pub fn from_weights(weights: &[u64]) -> Result<Self, MetricsError> {
        let total: u64 = weights.iter().sum();
        if total == 0 {
            return Err(MetricsError::ZeroMass);
        }
        let total = T::from_u64(total).expect("count fits scalar");
        let probs = weights
            .iter()
            .map(|&w| T::from_u64(w).expect("count fits scalar") / total)
            .collect();
        Ok(Distribution { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one outcome");
        Distribution {
            probs: vec![T::one() / T::from_count(n); n],
        }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Positions ordered by probability descending, ties by position.
    pub fn rank_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Shannon entropy `-Σ p ln p`, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &Distribution<T>) -> T {
    -p.probs
        .iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| x * x.ln())
        .sum::<T>()
}

/// `-Σ_{p_i>0} p_i ln max(q_i, eps)`.
pub fn cross_entropy<T: Scalar>(
    p: &Distribution<T>,
    q: &Distribution<T>,
    eps: T,
) -> Result<T, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::LengthMismatch(p.len(), q.len()));
    }
    Ok(-p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| pi * qi.max(eps).ln())
        .sum::<T>())
}

/// Reconstructs a full prediction from ranked picks by re-assigning the
/// target's own values.
///
/// With `v` the target values sorted descending, the model's `i`-th pick
/// receives `v[i]`. The unpicked candidates, ordered by their own target
/// probability (descending, ties by position), receive the rest of `v` in
/// order. The result is always a permutation of `p`'s values.
pub fn impose_distribution<T: Scalar>(
    p: &Distribution<T>,
    picks: &[usize],
) -> Result<Distribution<T>, MetricsError> {
    let n = p.len();
    let mut picked = vec![false; n];
    for &c in picks {
        if c >= n {
            return Err(MetricsError::PickOutOfRange(c));
        }
        if std::mem::replace(&mut picked[c], true) {
            return Err(MetricsError::DuplicatePick(c));
        }
    }
    let mut values = p.probs.clone();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));

    let mut q = vec![T::zero(); n];
    for (&c, &v) in picks.iter().zip(&values) {
        q[c] = v;
    }
    let rest = p.rank_order().into_iter().filter(|&c| !picked[c]);
    for (c, &v) in rest.zip(&values[picks.len()..]) {
        q[c] = v;
    }
    Ok(Distribution { probs: q })
}

/// Group frequency of each candidate: total event weight between `users`
/// and the candidate, normalized. Users and candidates are dataset positions.
pub fn target_distribution(
    dataset: &Dataset,
    users: &[u32],
    candidates: &[u32],
) -> Result<Distribution<f64>, MetricsError> {
    let mut member = vec![false; dataset.users().len()];
    for &u in users {
        member[u as usize] = true;
    }
    let weights: Vec<u64> = candidates
        .iter()
        .map(|&item| {
            dataset
                .item_user_positions(item)
                .iter()
                .filter(|&&u| member[u as usize])
                .map(|&u| {
                    let row = dataset.user_item_weights(u);
                    row.binary_search_by_key(&item, |&(i, _)| i)
                        .map(|k| row[k].1)
                        .unwrap_or(0)
                })
                .sum()
        })
        .collect();
    Distribution::from_weights(&weights)
}

/// How responses with fewer than [`TOP_N`] valid picks are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringPolicy {
    /// Only complete rankings are scored.
    #[default]
    Strict,
    /// Partial rankings are completed with unpicked candidates in
    /// candidate-list order.
    Pad,
}

impl fmt::Display for ScoringPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringPolicy::Strict => "strict",
            ScoringPolicy::Pad => "pad",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub case_id: String,
    pub model: String,
    pub domain: Domain,
    pub setup: Setup,
    pub setting: String,
    pub proxy: String,
    pub h: usize,
    pub group_size: usize,
    #[serde(rename = "H")]
    pub entropy: f64,
    #[serde(rename = "CE")]
    pub cross_entropy: f64,
    pub parse_status: ParseStatus,
}

impl ScoredCase {
    pub fn gap(&self) -> f64 {
        self.cross_entropy - self.entropy
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unscored {
    pub case_id: String,
    pub model: String,
    pub reason: String,
}

/// Scores one response: `H` of the case target and `CE` of the target
/// against the imposed distribution.
pub fn score_case(
    case: &EvalCase,
    response: &RankedResponse,
    model: &str,
    policy: ScoringPolicy,
) -> Result<ScoredCase, Unscored> {
    let unscored = |reason: String| Unscored {
        case_id: case.case_id.clone(),
        model: model.to_string(),
        reason,
    };
    if response.case_id != case.case_id {
        return Err(unscored(format!(
            "response belongs to case {}",
            response.case_id
        )));
    }
    match (response.parse_status, policy) {
        (ParseStatus::Unparseable, _) => return Err(unscored("unparseable response".into())),
        (ParseStatus::Partial, ScoringPolicy::Strict) => {
            return Err(unscored(format!(
                "partial response ({} of {TOP_N} picks) under strict policy",
                response.ranked.len()
            )))
        }
        _ => {}
    }

    let mut picks = Vec::with_capacity(TOP_N);
    for id in &response.ranked {
        let pos = case
            .candidates
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| unscored(format!("ranked item `{id}` is not a candidate")))?;
        picks.push(pos);
    }
    let want = TOP_N.min(case.candidates.len());
    if picks.len() < want {
        let mut taken = vec![false; case.candidates.len()];
        for &p in &picks {
            taken[p] = true;
        }
        let fill: Vec<usize> = (0..case.candidates.len()).filter(|&c| !taken[c]).collect();
        picks.extend(fill.into_iter().take(want - picks.len()));
    }

    let p = Distribution::new(case.target.clone()).map_err(|e| unscored(e.to_string()))?;
    let q = impose_distribution(&p, &picks).map_err(|e| unscored(e.to_string()))?;
    let h = entropy(&p);
    let ce = cross_entropy(&p, &q, DEFAULT_EPS).map_err(|e| unscored(e.to_string()))?;
    Ok(ScoredCase {
        case_id: case.case_id.clone(),
        model: model.to_string(),
        domain: case.domain,
        setup: case.setup,
        setting: case.setting.clone(),
        proxy: case.proxy_key.to_string(),
        h: case.history.len(),
        group_size: case.group_size,
        entropy: h,
        cross_entropy: ce,
        parse_status: response.parse_status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> Distribution<f64> {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_reference_values() {
        assert_abs_diff_eq!(entropy(&Distribution::<f64>::uniform(50)), 50f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&dist(&[0.0, 1.0, 0.0])), 0.0);
        // independent evaluation: 1.0397207708399179
        assert_abs_diff_eq!(entropy(&dist(&[0.5, 0.25, 0.25, 0.0])), 1.0397207708399179, epsilon = 1e-12);
    }

    #[test]
    fn entropy_in_f32() {
        let u = Distribution::<f32>::uniform(50);
        assert!((entropy(&u) - 50f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn impose_miniature() {
        let p = dist(&[0.4, 0.3, 0.2, 0.1, 0.0]);
        let q = impose_distribution(&p, &[2, 0]).unwrap();
        assert_eq!(q.probs(), &[0.3, 0.2, 0.4, 0.1, 0.0]);
        // independent evaluation of both sums
        assert_abs_diff_eq!(entropy(&p), 1.2798542258336674, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&p, &q, DEFAULT_EPS).unwrap(), 1.3779371511348402, epsilon = 1e-12);
    }

    #[test]
    fn impose_identity_when_picks_follow_target() {
        let p = dist(&[0.1, 0.4, 0.0, 0.3, 0.2]);
        let picks = p.rank_order()[..2].to_vec();
        assert_eq!(impose_distribution(&p, &picks).unwrap(), p);
        assert_eq!(cross_entropy(&p, &p, DEFAULT_EPS).unwrap(), entropy(&p));
    }

    #[test]
    fn worst_picks_take_the_largest_values() {
        // 12 positive, 12 zero; pick ten zero-target items
        let mut w = vec![0u64; 24];
        for (i, x) in w.iter_mut().enumerate().take(12) {
            *x = 12 - i as u64;
        }
        let p = Distribution::<f64>::from_weights(&w).unwrap();
        let picks: Vec<usize> = (12..22).collect();
        let q = impose_distribution(&p, &picks).unwrap();
        let mut sorted = p.probs().to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (k, &c) in picks.iter().enumerate() {
            assert_eq!(q.probs()[c], sorted[k]);
        }
        // brute force: no other choice of 10 picks yields a larger CE under the rule
        let worst = cross_entropy(&p, &q, DEFAULT_EPS).unwrap();
        let orders: Vec<Vec<usize>> = vec![(0..10).collect(), (2..12).collect(), (5..15).collect(), (14..24).collect()];
        for picks in orders {
            let ce = cross_entropy(&p, &impose_distribution(&p, &picks).unwrap(), DEFAULT_EPS).unwrap();
            assert!(ce <= worst + 1e-12);
        }
    }

    #[test]
    fn zero_q_is_clamped() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[1.0, 0.0]);
        let ce = cross_entropy(&p, &q, DEFAULT_EPS).unwrap();
        assert!(ce.is_finite());
        assert_abs_diff_eq!(ce, -0.5 * 1e-12f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn impose_rejects_bad_picks() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(impose_distribution(&p, &[1, 1]), Err(MetricsError::DuplicatePick(1)));
        assert_eq!(impose_distribution(&p, &[2]), Err(MetricsError::PickOutOfRange(2)));
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(Distribution::<f64>::from_weights(&[0, 0]), Err(MetricsError::ZeroMass));
        assert_eq!(Distribution::<f64>::from_weights(&[3, 1, 0]).unwrap().probs(), &[0.75, 0.25, 0.0]);
    }

    #[test]
    fn swapping_top_pick_for_zero_target_never_helps() {
        // exhaustive over 5-candidate miniatures with top-2 picks
        let targets: [[f64; 5]; 4] = [
            [0.4, 0.3, 0.2, 0.1, 0.0],
            [0.0, 0.5, 0.0, 0.25, 0.25],
            [0.7, 0.0, 0.1, 0.1, 0.1],
            [0.2, 0.2, 0.2, 0.4, 0.0],
        ];
        for t in targets {
            let p = dist(&t);
            let top = p.rank_order()[0];
            for zero in (0..5).filter(|&c| t[c] == 0.0) {
                for second in (0..5).filter(|&c| c != top && c != zero) {
                    let good = impose_distribution(&p, &[top, second]).unwrap();
                    let bad = impose_distribution(&p, &[zero, second]).unwrap();
                    let ce_good = cross_entropy(&p, &good, DEFAULT_EPS).unwrap();
                    let ce_bad = cross_entropy(&p, &bad, DEFAULT_EPS).unwrap();
                    assert!(ce_bad >= ce_good - 1e-12, "{t:?} {zero} {second}");
                }
            }
        }
    }

    fn weights_and_picks() -> impl Strategy<Value = (Vec<u64>, Vec<usize>)> {
        (2usize..60).prop_flat_map(|n| {
            let weights = proptest::collection::vec(0u64..20, n)
                .prop_filter("needs mass", |w| w.iter().any(|&x| x > 0));
            let picks = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
            let m = 0..=n.min(TOP_N);
            (weights, picks, m).prop_map(|(w, picks, m)| (w, picks[..m].to_vec()))
        })
    }

    proptest! {
        #[test]
        fn imposed_is_a_permutation_and_gibbs_holds((w, picks) in weights_and_picks()) {
            let p = Distribution::<f64>::from_weights(&w).unwrap();
            let q = impose_distribution(&p, &picks).unwrap();
            let mut a = p.probs().to_vec();
            let mut b = q.probs().to_vec();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, b);
            let h = entropy(&p);
            let ce = cross_entropy(&p, &q, DEFAULT_EPS).unwrap();
            prop_assert!(ce >= h - 1e-9);
            prop_assert!(h >= 0.0 && h <= (w.len() as f64).ln() + 1e-12);
        }
    }
}
