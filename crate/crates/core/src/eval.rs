//! Test-split evaluation: RMSE, the ranking metrics MRR / MAP / mean
//! recall, the explainability metrics MEP / MER, and epoch-bucketed
//! explanation evidence for individual recommendations.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::error::{Error, Result};
use crate::graph::ExplainabilityGraph;
use crate::model::{predict, ModelParams, StateTrace};

/// Top-N recommendation list for one user: score-descending, ties toward
/// the smaller item id, train-rated items excluded.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<(usize, f64)>,
    pub cutoff: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Recommendation list length N.
    pub top_n: usize,
    /// Stationary weight above which an item counts as explainable.
    pub theta_exp: f64,
    /// Minimum test rating for an item to count as relevant.
    pub relevance_min: u8,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_n: 10,
            theta_exp: 0.01,
            relevance_min: 4,
        }
    }
}

/// Clamped-prediction RMSE over an explicit set of events. `None` when the
/// set is empty.
pub fn rmse_over_events(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    indices: impl Iterator<Item = usize>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in indices {
        let ev = ds.events()[idx];
        let pred = predict(trace, params, ev.user, ev.item, ds.epoch(idx)).clamp(1.0, 5.0);
        let e = pred - ev.rating as f64;
        sum += e * e;
        count += 1;
    }
    if count == 0 {
        None
    } else {
        Some((sum / count as f64).sqrt())
    }
}

/// RMSE over the test split, predictions clamped to the star scale.
pub fn rmse(trace: &StateTrace, params: &ModelParams, ds: &RatingDataset) -> Result<f64> {
    rmse_over_events(trace, params, ds, ds.test_indices()).ok_or(Error::EmptyTestSet)
}

/// RMSE of the train-mean predictor on the test split; the baseline that
/// any trained model has to clear.
pub fn global_mean_rmse(ds: &RatingDataset) -> Result<f64> {
    let train: Vec<usize> = ds.train_indices().collect();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = train.iter().map(|&i| ds.events()[i].rating as f64).sum::<f64>()
        / train.len() as f64;
    let mean = mean.clamp(1.0, 5.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in ds.test_indices() {
        let e = ds.events()[idx].rating as f64 - mean;
        sum += e * e;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok((sum / count as f64).sqrt())
}

/// Scores every item the user has not rated in train and returns the top
/// `n`. Scoring happens at the user's first test epoch (falling back to
/// the last train epoch for users without test events).
pub fn rank(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    user: usize,
    n: usize,
) -> Result<RankedList> {
    if user >= ds.num_users {
        return Err(Error::UnknownUser(user));
    }
    let epoch = ds
        .user_events(user)
        .iter()
        .filter(|&&i| ds.split(i) == Split::Test)
        .map(|&i| ds.epoch(i))
        .min()
        .or_else(|| ds.last_train_epoch())
        .unwrap_or(0);
    rank_at(trace, params, ds, user, epoch, n)
}

/// `rank` at an explicit epoch.
pub fn rank_at(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    user: usize,
    epoch: usize,
    n: usize,
) -> Result<RankedList> {
    if user >= ds.num_users {
        return Err(Error::UnknownUser(user));
    }
    let rated_in_train: BTreeSet<usize> = ds
        .user_events(user)
        .iter()
        .filter(|&&i| ds.split(i) == Split::Train)
        .map(|&i| ds.events()[i].item)
        .collect();
    let mut scored: Vec<(usize, f64)> = (0..ds.num_items)
        .filter(|item| !rated_in_train.contains(item))
        .map(|item| (item, predict(trace, params, user, item, epoch)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(n);
    Ok(RankedList {
        user,
        items: scored,
        cutoff: n,
    })
}

/// Per-user relevance sets: items rated at least `relevance_min` in test.
pub fn relevance_sets(ds: &RatingDataset, relevance_min: u8) -> Vec<BTreeSet<usize>> {
    let mut sets = vec![BTreeSet::new(); ds.num_users];
    for idx in ds.test_indices() {
        let ev = ds.events()[idx];
        if ev.rating >= relevance_min {
            sets[ev.user].insert(ev.item);
        }
    }
    sets
}

/// Mean reciprocal rank of the first relevant item; users with empty
/// relevance sets are excluded from the mean.
pub fn mrr(lists: &[RankedList], relevance: &[BTreeSet<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let rel = &relevance[list.user];
        if rel.is_empty() {
            continue;
        }
        count += 1;
        for (pos, (item, _)) in list.items.iter().enumerate() {
            if rel.contains(item) {
                sum += 1.0 / (pos + 1) as f64;
                break;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean average precision at the list cutoff; the per-user AP denominator
/// is min(#relevant, N).
pub fn map_at_n(lists: &[RankedList], relevance: &[BTreeSet<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let rel = &relevance[list.user];
        if rel.is_empty() {
            continue;
        }
        count += 1;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (pos, (item, _)) in list.items.iter().enumerate() {
            if rel.contains(item) {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        sum += ap / rel.len().min(list.cutoff) as f64;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean recall: relevant items retrieved in the top N over all relevant
/// items, averaged over users with non-empty relevance sets.
pub fn mean_recall_at_n(lists: &[RankedList], relevance: &[BTreeSet<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let rel = &relevance[list.user];
        if rel.is_empty() {
            continue;
        }
        count += 1;
        let hits = list.items.iter().filter(|(i, _)| rel.contains(i)).count();
        sum += hits as f64 / rel.len() as f64;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn explainable_items(graph: &ExplainabilityGraph, user: usize, num_items: usize, theta: f64) -> BTreeSet<usize> {
    (0..num_items)
        .filter(|&m| graph.stationary_weight(user, m) > theta)
        .collect()
}

/// Mean explainable precision: the share of each user's recommendations
/// whose stationary weight clears the threshold, averaged over users.
pub fn mep(lists: &[RankedList], graph: &ExplainabilityGraph, theta: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        if list.items.is_empty() {
            continue;
        }
        count += 1;
        let explainable = list
            .items
            .iter()
            .filter(|(m, _)| graph.stationary_weight(list.user, *m) > theta)
            .count();
        sum += explainable as f64 / list.items.len() as f64;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean explainable recall: explainable recommendations over the user's
/// explainable catalogue; users with no explainable items are excluded.
pub fn mer(
    lists: &[RankedList],
    graph: &ExplainabilityGraph,
    num_items: usize,
    theta: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let total = explainable_items(graph, list.user, num_items, theta).len();
        if total == 0 {
            continue;
        }
        count += 1;
        let in_top = list
            .items
            .iter()
            .filter(|(m, _)| graph.stationary_weight(list.user, *m) > theta)
            .count();
        sum += in_top as f64 / total as f64;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Recency bucket boundaries in days before the present, ascending. The
/// default mirrors the month / year / older display: `[30, 365]`.
#[derive(Debug, Clone)]
pub struct BucketSpec {
    pub upper_bounds_days: Vec<u32>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        BucketSpec {
            upper_bounds_days: vec![30, 365],
        }
    }
}

impl BucketSpec {
    pub fn num_buckets(&self) -> usize {
        self.upper_bounds_days.len() + 1
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.num_buckets());
        let mut prev = 0u32;
        for &ub in &self.upper_bounds_days {
            if prev == 0 {
                out.push(format!("within {ub} days"));
            } else {
                out.push(format!("{} to {ub} days", prev + 1));
            }
            prev = ub;
        }
        out.push(format!("more than {prev} days"));
        out
    }

    fn bucket_of(&self, age_days: u32) -> usize {
        for (idx, &ub) in self.upper_bounds_days.iter().enumerate() {
            if age_days <= ub {
                return idx;
            }
        }
        self.upper_bounds_days.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationBucket {
    pub label: String,
    pub count: usize,
    pub mean_rating: Option<f64>,
}

/// Neighbourhood evidence backing one (user, item) recommendation: the
/// neighbours' ratings of the item partitioned into recency buckets, the
/// stationary weight, and the per-epoch temporal weights (most recent
/// first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationEvidence {
    pub user: usize,
    pub item: usize,
    pub buckets: Vec<ExplanationBucket>,
    pub stationary_weight: f64,
    pub temporal_weights: Vec<(usize, f64)>,
}

/// Partitions the ratings of `user`'s neighbours on `item` into recency
/// buckets measured back from the last train day.
pub fn explain(
    graph: &ExplainabilityGraph,
    ds: &RatingDataset,
    user: usize,
    item: usize,
    spec: &BucketSpec,
) -> Result<ExplanationEvidence> {
    if user >= ds.num_users {
        return Err(Error::UnknownUser(user));
    }
    if item >= ds.num_items {
        return Err(Error::UnknownItem(item));
    }
    let nbrs = graph
        .neighbor_sets
        .get(user)
        .ok_or(Error::UnknownUser(user))?;
    let present = ds.last_train_day().unwrap_or(0);

    let mut counts = vec![0usize; spec.num_buckets()];
    let mut sums = vec![0.0f64; spec.num_buckets()];
    for &(z, _) in &nbrs.neighbors {
        for &idx in ds.user_events(z) {
            if ds.split(idx) != Split::Train || ds.events()[idx].item != item {
                continue;
            }
            let ev = ds.events()[idx];
            let age_days = present.saturating_sub(ev.day);
            let b = spec.bucket_of(age_days);
            counts[b] += 1;
            sums[b] += ev.rating as f64;
        }
    }
    let buckets = spec
        .labels()
        .into_iter()
        .zip(counts.iter().zip(&sums))
        .map(|(label, (&count, &sum))| ExplanationBucket {
            label,
            count,
            mean_rating: if count > 0 {
                Some(sum / count as f64)
            } else {
                None
            },
        })
        .collect();

    let mut temporal: Vec<(usize, f64)> = (0..ds.grid.num_epochs)
        .filter_map(|t| {
            let w = graph.temporal_weight(user, item, t);
            if w > 0.0 {
                Some((t, w))
            } else {
                None
            }
        })
        .collect();
    temporal.sort_by(|a, b| b.0.cmp(&a.0));

    Ok(ExplanationEvidence {
        user,
        item,
        buckets,
        stationary_weight: graph.stationary_weight(user, item),
        temporal_weights: temporal,
    })
}

/// One evaluation row per ranked user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerUserRow {
    pub user: usize,
    pub num_test_events: usize,
    pub num_relevant: usize,
    pub reciprocal_rank: Option<f64>,
    pub average_precision: Option<f64>,
    pub recall: Option<f64>,
    pub explainable_in_top: usize,
    pub explainable_total: usize,
}

/// Echo of the evaluation configuration that produced a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub p: usize,
    pub top_n: usize,
    pub theta_exp: f64,
    pub relevance_min: u8,
}

/// All six metrics plus per-user evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mrr: f64,
    pub map: f64,
    pub mr: f64,
    pub mep: f64,
    pub mer: f64,
    pub config: ReportConfig,
    pub per_user: Vec<PerUserRow>,
}

impl EvalReport {
    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Flat CSV of the per-user rows.
    pub fn write_per_user_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf = String::from(
            "user,num_test_events,num_relevant,reciprocal_rank,average_precision,recall,explainable_in_top,explainable_total\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for row in &self.per_user {
            buf.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.user,
                row.num_test_events,
                row.num_relevant,
                opt(row.reciprocal_rank),
                opt(row.average_precision),
                opt(row.recall),
                row.explainable_in_top,
                row.explainable_total
            ));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(buf.as_bytes())?;
        Ok(())
    }
}

/// Ranks every user with at least one test event.
pub fn ranked_lists(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    n: usize,
) -> Result<Vec<RankedList>> {
    let mut users: Vec<usize> = Vec::new();
    for u in 0..ds.num_users {
        if ds
            .user_events(u)
            .iter()
            .any(|&i| ds.split(i) == Split::Test)
        {
            users.push(u);
        }
    }
    users
        .into_iter()
        .map(|u| rank(trace, params, ds, u, n))
        .collect()
}

/// Full evaluation over the test split.
pub fn evaluate(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let rmse_value = rmse(trace, params, ds)?;
    let lists = ranked_lists(trace, params, ds, cfg.top_n)?;
    let relevance = relevance_sets(ds, cfg.relevance_min);

    let mut per_user = Vec::with_capacity(lists.len());
    for list in &lists {
        let rel = &relevance[list.user];
        let num_test = ds
            .user_events(list.user)
            .iter()
            .filter(|&&i| ds.split(i) == Split::Test)
            .count();
        let (rr, ap, recall) = if rel.is_empty() {
            (None, None, None)
        } else {
            let mut rr = 0.0;
            let mut hits = 0usize;
            let mut ap = 0.0;
            for (pos, (item, _)) in list.items.iter().enumerate() {
                if rel.contains(item) {
                    if hits == 0 {
                        rr = 1.0 / (pos + 1) as f64;
                    }
                    hits += 1;
                    ap += hits as f64 / (pos + 1) as f64;
                }
            }
            (
                Some(rr),
                Some(ap / rel.len().min(list.cutoff) as f64),
                Some(hits as f64 / rel.len() as f64),
            )
        };
        let explainable_total =
            explainable_items(graph, list.user, ds.num_items, cfg.theta_exp).len();
        let explainable_in_top = list
            .items
            .iter()
            .filter(|(m, _)| graph.stationary_weight(list.user, *m) > cfg.theta_exp)
            .count();
        per_user.push(PerUserRow {
            user: list.user,
            num_test_events: num_test,
            num_relevant: rel.len(),
            reciprocal_rank: rr,
            average_precision: ap,
            recall,
            explainable_in_top,
            explainable_total,
        });
    }

    Ok(EvalReport {
        rmse: rmse_value,
        mrr: mrr(&lists, &relevance),
        map: map_at_n(&lists, &relevance),
        mr: mean_recall_at_n(&lists, &relevance),
        mep: mep(&lists, graph, cfg.theta_exp),
        mer: mer(&lists, graph, ds.num_items, cfg.theta_exp),
        config: ReportConfig {
            p: graph.p,
            top_n: cfg.top_n,
            theta_exp: cfg.theta_exp,
            relevance_min: cfg.relevance_min,
        },
        per_user,
    })
}
