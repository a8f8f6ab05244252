//! User–user discounted similarities, top-p neighbourhoods, and the
//! explainability edge weights over the user–item bipartite graph: a
//! temporal matrix indexed `(user, item, epoch)` and a stationary matrix
//! indexed `(user, item)`, both in `[0, 1]` and built from train events
//! only.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::data::{RatingDataset, Split};
use crate::error::{Error, Result};

/// The `p` users most similar to one user, score-descending with ties
/// broken by ascending id.
#[derive(Debug, Clone)]
pub struct NeighborSet {
    pub user: usize,
    pub reference_epoch: usize,
    /// The p the set was requested with; the denominator of all evidence
    /// ratios even when fewer candidates exist.
    pub requested_p: usize,
    pub neighbors: Vec<(usize, f64)>,
}

/// Sparse explainability weights. Absent entries are 0.
#[derive(Debug, Clone)]
pub struct ExplainabilityGraph {
    pub p: usize,
    pub reference_epoch: usize,
    /// Sorted by key `(user, item, epoch)`.
    temporal: Vec<((usize, usize, usize), f64)>,
    /// Sorted by key `(user, item)`.
    stationary: Vec<((usize, usize), f64)>,
    pub neighbor_sets: Vec<NeighborSet>,
}

impl ExplainabilityGraph {
    /// Assembles a graph from explicit weight entries; keys are sorted.
    pub fn from_entries(
        p: usize,
        reference_epoch: usize,
        mut temporal: Vec<((usize, usize, usize), f64)>,
        mut stationary: Vec<((usize, usize), f64)>,
    ) -> ExplainabilityGraph {
        temporal.sort_by_key(|e| e.0);
        stationary.sort_by_key(|e| e.0);
        ExplainabilityGraph {
            p,
            reference_epoch,
            temporal,
            stationary,
            neighbor_sets: Vec::new(),
        }
    }

    pub fn temporal_entries(&self) -> &[((usize, usize, usize), f64)] {
        &self.temporal
    }

    pub fn stationary_entries(&self) -> &[((usize, usize), f64)] {
        &self.stationary
    }

    /// M_{umt}; 0 when no entry is stored.
    pub fn temporal_weight(&self, user: usize, item: usize, epoch: usize) -> f64 {
        match self
            .temporal
            .binary_search_by_key(&(user, item, epoch), |e| e.0)
        {
            Ok(idx) => self.temporal[idx].1,
            Err(_) => 0.0,
        }
    }

    /// M̄_{um}; 0 when no entry is stored.
    pub fn stationary_weight(&self, user: usize, item: usize) -> f64 {
        match self.stationary.binary_search_by_key(&(user, item), |e| e.0) {
            Ok(idx) => self.stationary[idx].1,
            Err(_) => 0.0,
        }
    }

    /// Writes both weight tables as delimited text: `u,m,t,weight` rows for
    /// the temporal matrix and `u,m,weight` rows for the stationary one.
    /// Weights are printed with 17 significant digits so a round trip is
    /// bit-exact.
    pub fn export<P: AsRef<Path>>(&self, temporal_path: P, stationary_path: P) -> Result<()> {
        let mut buf = String::new();
        for &((u, m, t), w) in &self.temporal {
            buf.push_str(&format!("{u},{m},{t},{w:.16e}\n"));
        }
        fs::File::create(temporal_path)?.write_all(buf.as_bytes())?;
        buf.clear();
        for &((u, m), w) in &self.stationary {
            buf.push_str(&format!("{u},{m},{w:.16e}\n"));
        }
        fs::File::create(stationary_path)?.write_all(buf.as_bytes())?;
        Ok(())
    }

    /// Reads weight tables written by [`export`](Self::export). Neighbour
    /// sets are not part of the interchange format; rebuild them from the
    /// dataset when they are needed.
    pub fn import<P: AsRef<Path>>(
        temporal_path: P,
        stationary_path: P,
        p: usize,
        reference_epoch: usize,
    ) -> Result<ExplainabilityGraph> {
        let parse = |s: &str, line: usize| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::MalformedLine {
                line,
                reason: format!("bad number {s:?}"),
            })
        };
        let mut temporal = Vec::new();
        for (idx, row) in fs::read_to_string(temporal_path)?.lines().enumerate() {
            if row.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 4 {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    reason: format!("expected 4 fields, found {}", f.len()),
                });
            }
            temporal.push((
                (
                    parse(f[0], idx + 1)? as usize,
                    parse(f[1], idx + 1)? as usize,
                    parse(f[2], idx + 1)? as usize,
                ),
                parse(f[3], idx + 1)?,
            ));
        }
        let mut stationary = Vec::new();
        for (idx, row) in fs::read_to_string(stationary_path)?.lines().enumerate() {
            if row.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 3 {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    reason: format!("expected 3 fields, found {}", f.len()),
                });
            }
            stationary.push((
                (
                    parse(f[0], idx + 1)? as usize,
                    parse(f[1], idx + 1)? as usize,
                ),
                parse(f[2], idx + 1)?,
            ));
        }
        temporal.sort_by_key(|e| e.0);
        stationary.sort_by_key(|e| e.0);
        Ok(ExplainabilityGraph {
            p,
            reference_epoch,
            temporal,
            stationary,
            neighbor_sets: Vec::new(),
        })
    }
}

/// Per-user train-split rating profile, keyed `(item, epoch)`. BTreeMap
/// keeps every summation order deterministic.
type Profile = BTreeMap<(usize, usize), f64>;

fn train_profiles(ds: &RatingDataset) -> Vec<Profile> {
    let mut profiles = vec![Profile::new(); ds.num_users];
    for idx in ds.train_indices() {
        let ev = ds.events()[idx];
        profiles[ev.user].insert((ev.item, ds.epoch(idx)), ev.rating as f64);
    }
    profiles
}

fn similarity_from_profiles(
    a: &Profile,
    b: &Profile,
    reference_epoch: usize,
    normalized: bool,
) -> f64 {
    let mut sim = 0.0;
    for (&(item, epoch), &ra) in a {
        if epoch > reference_epoch {
            continue;
        }
        if let Some(&rb) = b.get(&(item, epoch)) {
            let age = (reference_epoch - epoch) as f64;
            sim += ra * rb / (1.0 + age);
        }
    }
    if !normalized {
        return sim;
    }
    let norm = |p: &Profile| -> f64 {
        let mut s = 0.0;
        for (&(_, epoch), &r) in p {
            if epoch > reference_epoch {
                continue;
            }
            let age = (reference_epoch - epoch) as f64;
            s += r * r / (1.0 + age);
        }
        s.sqrt()
    };
    let d = norm(a) * norm(b);
    if d > 0.0 {
        sim / d
    } else {
        0.0
    }
}

/// Discounted inner-product similarity between two users: over co-rated
/// `(item, epoch)` pairs, Σ r_i·r_k / (1 + age), where age counts epochs
/// back from `reference_epoch`. Train events only; events after the
/// reference epoch contribute nothing.
pub fn similarity(
    ds: &RatingDataset,
    i: usize,
    k: usize,
    reference_epoch: usize,
) -> Result<f64> {
    if i == k {
        return Err(Error::SameUser(i));
    }
    let profiles = train_profiles(ds);
    Ok(similarity_from_profiles(
        &profiles[i],
        &profiles[k],
        reference_epoch,
        false,
    ))
}

fn neighborhood_from_profiles(
    profiles: &[Profile],
    u: usize,
    p: usize,
    reference_epoch: usize,
    normalized: bool,
) -> NeighborSet {
    let mut scored: Vec<(usize, f64)> = (0..profiles.len())
        .filter(|&z| z != u)
        .map(|z| {
            (
                z,
                similarity_from_profiles(&profiles[u], &profiles[z], reference_epoch, normalized),
            )
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("similarity is finite")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(p);
    NeighborSet {
        user: u,
        reference_epoch,
        requested_p: p,
        neighbors: scored,
    }
}

/// The `p` users most similar to `u` (ties toward smaller ids), excluding
/// `u` itself. Fewer than `p` candidates yields all of them.
pub fn neighborhood(
    ds: &RatingDataset,
    u: usize,
    p: usize,
    reference_epoch: usize,
) -> NeighborSet {
    let profiles = train_profiles(ds);
    neighborhood_from_profiles(&profiles, u, p, reference_epoch, false)
}

/// Evidence ratio behind both weight matrices: Σ ratings over the
/// neighbourhood divided by `p · max rating`, with an empty max defined
/// as weight 0.
#[inline]
pub fn evidence_ratio(sum: f64, max: f64, p: usize) -> f64 {
    if max > 0.0 {
        sum / (p as f64 * max)
    } else {
        0.0
    }
}

/// Temporal weight M_{umt}: how strongly `u`'s neighbourhood endorses
/// `item` at `epoch`. 0 when no neighbour rated it then.
pub fn temporal_weight(
    ds: &RatingDataset,
    neighbors: &NeighborSet,
    item: usize,
    epoch: usize,
) -> f64 {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &(z, _) in &neighbors.neighbors {
        if let Some(r) = train_rating_at(ds, z, item, epoch) {
            sum += r;
            max = max.max(r);
        }
    }
    evidence_ratio(sum, max, neighbors.requested_p)
}

/// Stationary weight M̄_{um}: the same ratio with each neighbour's rating
/// replaced by their mean rating of the item across epochs.
pub fn stationary_weight(ds: &RatingDataset, neighbors: &NeighborSet, item: usize) -> f64 {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &(z, _) in &neighbors.neighbors {
        if let Some(mean) = train_mean_rating(ds, z, item) {
            sum += mean;
            max = max.max(mean);
        }
    }
    evidence_ratio(sum, max, neighbors.requested_p)
}

fn train_rating_at(ds: &RatingDataset, user: usize, item: usize, epoch: usize) -> Option<f64> {
    ds.user_events(user)
        .iter()
        .find(|&&i| {
            ds.split(i) == Split::Train && ds.events()[i].item == item && ds.epoch(i) == epoch
        })
        .map(|&i| ds.events()[i].rating as f64)
}

fn train_mean_rating(ds: &RatingDataset, user: usize, item: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in ds.user_events(user) {
        if ds.split(i) == Split::Train && ds.events()[i].item == item {
            sum += ds.events()[i].rating as f64;
            count += 1;
        }
    }
    if count > 0 {
        Some(sum / count as f64)
    } else {
        None
    }
}

/// Builds the full explainability graph from the train split: one
/// neighbourhood per user, then every `(u, item, epoch)` and `(u, item)`
/// entry for which at least one neighbour carries evidence.
pub fn build_graph(
    ds: &RatingDataset,
    p: usize,
    reference_epoch: usize,
    normalized_similarity: bool,
) -> ExplainabilityGraph {
    let profiles = train_profiles(ds);
    let mut neighbor_sets = Vec::with_capacity(ds.num_users);
    let mut temporal = Vec::new();
    let mut stationary = Vec::new();

    for u in 0..ds.num_users {
        let nbrs =
            neighborhood_from_profiles(&profiles, u, p, reference_epoch, normalized_similarity);

        // Accumulate (sum, max) per evidence key, visiting neighbours in
        // set order so summation order is reproducible.
        let mut temporal_acc: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        let mut stationary_acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for &(z, _) in &nbrs.neighbors {
            let mut per_item: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for (&(item, epoch), &r) in &profiles[z] {
                let e = temporal_acc.entry((item, epoch)).or_insert((0.0, 0.0));
                e.0 += r;
                e.1 = e.1.max(r);
                let s = per_item.entry(item).or_insert((0.0, 0));
                s.0 += r;
                s.1 += 1;
            }
            for (item, (sum, count)) in per_item {
                let mean = sum / count as f64;
                let e = stationary_acc.entry(item).or_insert((0.0, 0.0));
                e.0 += mean;
                e.1 = e.1.max(mean);
            }
        }
        for ((item, epoch), (sum, max)) in temporal_acc {
            temporal.push(((u, item, epoch), evidence_ratio(sum, max, p)));
        }
        for (item, (sum, max)) in stationary_acc {
            stationary.push(((u, item), evidence_ratio(sum, max, p)));
        }
        neighbor_sets.push(nbrs);
    }

    ExplainabilityGraph {
        p,
        reference_epoch,
        temporal,
        stationary,
        neighbor_sets,
    }
}
