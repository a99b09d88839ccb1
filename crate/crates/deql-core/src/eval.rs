//! Ranking evaluation: score users with a trained weight matrix and compute
//! Recall@K, NDCG@K, held-out MSE, and diagonal-value histograms.
//!
//! Users are scored as input_row * W; items the user already has are masked
//! to negative infinity before ranking so the model is never credited for
//! recommending its own input. Ties rank by ascending item index, which
//! keeps every metric a pure function of its inputs. Metrics average only
//! over users with a nonempty target; users on the test side whose target is
//! empty count as skipped.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::model::WeightMatrix;

/// Aggregated evaluation metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    /// Users with a nonempty target, i.e. the averaging population.
    pub num_users_evaluated: usize,
    /// Test-side users with input but no target items.
    pub skipped_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag_histogram: Option<Vec<(f64, u64)>>,
}

/// Score one user: input_row * W, then mask the input items themselves with
/// a negative-infinity sentinel so they cannot be recommended back.
///
/// An empty input row yields all-zero scores with no masking.
pub fn score_user(input_items: &[usize], w: &WeightMatrix) -> Vec<f64> {
    let n = w.n;
    let mut scores = vec![0.0f64; n];
    for &k in input_items {
        for (s, &wv) in scores.iter_mut().zip(w.w.row(k)) {
            *s += wv;
        }
    }
    for &k in input_items {
        scores[k] = f64::NEG_INFINITY;
    }
    scores
}

/// Item indices ranked by descending score, ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// |top-K ∩ target| / min(K, |target|).
pub fn recall_at_k(scores: &[f64], target: &BTreeSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    assert!(!target.is_empty(), "target must be nonempty");
    let hits = ranked(scores)
        .into_iter()
        .take(k)
        .filter(|i| target.contains(i))
        .count();
    hits as f64 / k.min(target.len()) as f64
}

/// Binary-relevance NDCG: DCG sums 1/log2(rank+1) over hits in the top K;
/// the ideal DCG packs min(K, |target|) hits into the leading ranks.
pub fn ndcg_at_k(scores: &[f64], target: &BTreeSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    assert!(!target.is_empty(), "target must be nonempty");
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| target.contains(i))
        .map(|(r0, _)| gain(r0 + 1))
        .sum();
    let idcg: f64 = (1..=k.min(target.len())).map(gain).sum();
    dcg / idcg
}

/// Held-out reconstruction error. With the retain mask Δ equal to one on
/// every cell outside `holdout`:
///
/// ```text
///     mse = ||(1-Δ) ⊙ (R - input W)||_F^2 / (number of ones in Δ)
/// ```
///
/// `input` must be the retained projection of R (its entries minus the
/// holdout cells); its rows are what the model sees. The numerator runs over
/// held-out cells only, all of which carry R = 1; the denominator counts
/// every grid cell outside the holdout.
pub fn mse(
    r: &InteractionMatrix,
    w: &WeightMatrix,
    holdout: &BTreeSet<(usize, usize)>,
    input: &InteractionMatrix,
) -> Result<f64> {
    for &(u, i) in holdout {
        if !r.contains(u, i) {
            return Err(Error::InvalidInput(format!(
                "holdout cell ({u},{i}) is not an entry of R"
            )));
        }
    }
    let retained = r.num_users() * r.num_items() - holdout.len();
    if retained == 0 {
        return Err(Error::InvalidInput(
            "every cell is held out; the retained set is empty".into(),
        ));
    }
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, i) in holdout {
        by_user.entry(u).or_default().push(i);
    }
    let mut numerator = 0.0;
    for (u, items) in by_user {
        let input_items = input.row_items(u);
        // Raw scores, no masking: held-out cells are never input cells.
        let mut yhat = vec![0.0f64; w.n];
        for &k in &input_items {
            for (y, &wv) in yhat.iter_mut().zip(w.w.row(k)) {
                *y += wv;
            }
        }
        for i in items {
            let res = 1.0 - yhat[i];
            numerator += res * res;
        }
    }
    Ok(numerator / retained as f64)
}

/// Histogram of W's diagonal over `num_bins` uniform bins spanning `range`;
/// values outside the range land in the nearest end bin. Returns
/// (bin lower edge, count) pairs.
pub fn diag_histogram(
    w: &WeightMatrix,
    num_bins: usize,
    range: (f64, f64),
) -> Result<Vec<(f64, u64)>> {
    let (lo, hi) = range;
    if num_bins < 1 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!(
            "histogram range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / num_bins as f64;
    let mut counts = vec![0u64; num_bins];
    for v in w.diag() {
        let bin = ((v - lo) / width).floor();
        let idx = if bin.is_nan() {
            0
        } else {
            bin.max(0.0).min((num_bins - 1) as f64) as usize
        };
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, c))
        .collect())
}

/// Score and rank every test-side user and average the metrics.
///
/// A user is on the test side when their input or target row is nonempty;
/// they enter the averages only with a nonempty target, otherwise they count
/// as skipped. Per-user metrics are computed in parallel and summed in user
/// order, so the report does not depend on thread count. The optional MSE is
/// computed over the target cells of the evaluated users only.
pub fn evaluate(
    input: &InteractionMatrix,
    target: &InteractionMatrix,
    w: &WeightMatrix,
    ks: &[usize],
    with_mse: bool,
    histogram: Option<(usize, (f64, f64))>,
) -> Result<EvalReport> {
    assert_eq!(input.num_users(), target.num_users(), "user dimensions must agree");
    assert_eq!(input.num_items(), w.n, "item dimension must match the model");
    assert_eq!(target.num_items(), w.n, "item dimension must match the model");
    let input_rows = input.rows();
    let target_rows = target.rows();

    let evaluated: Vec<usize> = (0..input.num_users())
        .filter(|&u| !target_rows[u].is_empty())
        .collect();
    let skipped_users = (0..input.num_users())
        .filter(|&u| target_rows[u].is_empty() && !input_rows[u].is_empty())
        .count();

    let per_user: Vec<Vec<(f64, f64)>> = evaluated
        .par_iter()
        .map(|&u| {
            let scores = score_user(&input_rows[u], w);
            let tgt: BTreeSet<usize> = target_rows[u].iter().copied().collect();
            ks.iter()
                .map(|&k| (recall_at_k(&scores, &tgt, k), ndcg_at_k(&scores, &tgt, k)))
                .collect()
        })
        .collect();

    let num = evaluated.len();
    let mut recall_at_k = BTreeMap::new();
    let mut ndcg_at_k = BTreeMap::new();
    for (ki, &k) in ks.iter().enumerate() {
        let (mut rsum, mut nsum) = (0.0, 0.0);
        for row in &per_user {
            rsum += row[ki].0;
            nsum += row[ki].1;
        }
        let denom = num.max(1) as f64;
        recall_at_k.insert(k, rsum / denom);
        ndcg_at_k.insert(k, nsum / denom);
    }

    let mse_value = if with_mse {
        // Restrict the grid to the evaluated users so empty rows elsewhere
        // do not dilute the denominator.
        let mut user_index = BTreeMap::new();
        for (new, &old) in evaluated.iter().enumerate() {
            user_index.insert(old, new);
        }
        let remap = |m: &InteractionMatrix| {
            InteractionMatrix::from_entries(
                evaluated.len().max(1),
                w.n,
                m.entries()
                    .filter_map(|(u, i)| user_index.get(&u).map(|&nu| (nu, i))),
            )
        };
        let input_m = remap(input);
        let target_m = remap(target);
        let full = InteractionMatrix::from_entries(
            evaluated.len().max(1),
            w.n,
            input_m.entries().chain(target_m.entries()),
        );
        let holdout: BTreeSet<(usize, usize)> = target_m.entries().collect();
        Some(mse(&full, w, &holdout, &input_m)?)
    } else {
        None
    };

    let diag = match histogram {
        Some((bins, range)) => Some(diag_histogram(w, bins, range)?),
        None => None,
    };

    Ok(EvalReport {
        recall_at_k,
        ndcg_at_k,
        mse: mse_value,
        num_users_evaluated: num,
        skipped_users,
        diag_histogram: diag,
    })
}
