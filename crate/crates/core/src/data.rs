//! Rating data: ingest of delimited `(user, item, day, rating)` tuples,
//! epoch binning, dual user/item indexing, temporal train/test split, and
//! seeded synthetic dataset generation for desk-scale experiments.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::dot;

/// One `(user, item, day, rating)` observation. Ratings are whole stars
/// in `[1, 5]`; `day` is an absolute day-stamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingEvent {
    pub user: usize,
    pub item: usize,
    pub day: u32,
    pub rating: u8,
}

/// Fixed-length binning of day-stamps into model epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochGrid {
    pub epoch_length_days: u32,
    pub origin_day: u32,
    pub num_epochs: usize,
}

impl EpochGrid {
    /// Epoch index of `day`, or `None` when `day` precedes the origin.
    pub fn epoch_of(&self, day: u32) -> Option<usize> {
        if day < self.origin_day {
            return None;
        }
        Some(((day - self.origin_day) / self.epoch_length_days) as usize)
    }
}

/// Binning parameters supplied at ingest time; the epoch count is derived
/// from the data.
#[derive(Debug, Clone, Copy)]
pub struct GridConfig {
    pub epoch_length_days: u32,
    pub origin_day: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            epoch_length_days: 30,
            origin_day: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Epoch-binned event store with by-user and by-item views and a per-event
/// train/test tag. Immutable once built; split operations return a new
/// dataset.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    events: Vec<RatingEvent>,
    epochs: Vec<usize>,
    splits: Vec<Split>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
    pub num_users: usize,
    pub num_items: usize,
    pub grid: EpochGrid,
}

impl RatingDataset {
    /// Builds a dataset from raw events. Duplicate `(user, item, epoch)`
    /// observations collapse to the latest by day (later input order wins
    /// ties). `min_epochs` forces the grid to cover at least that many
    /// epochs even when the tail is empty.
    pub fn from_events(
        events: Vec<RatingEvent>,
        splits: Option<Vec<Split>>,
        grid_cfg: GridConfig,
        min_epochs: Option<usize>,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let splits = splits.unwrap_or_else(|| vec![Split::Train; events.len()]);
        assert_eq!(events.len(), splits.len());

        // Latest-by-day wins per (user, item, epoch).
        let mut keep: std::collections::BTreeMap<(usize, usize, usize), usize> =
            std::collections::BTreeMap::new();
        for (pos, ev) in events.iter().enumerate() {
            let epoch = grid_cfg_epoch(&grid_cfg, ev)?;
            let key = (ev.user, ev.item, epoch);
            match keep.get(&key) {
                Some(&prev) if events[prev].day > ev.day => {}
                _ => {
                    keep.insert(key, pos);
                }
            }
        }
        let mut retained: Vec<usize> = keep.into_values().collect();
        retained.sort_unstable();

        let mut out_events = Vec::with_capacity(retained.len());
        let mut out_epochs = Vec::with_capacity(retained.len());
        let mut out_splits = Vec::with_capacity(retained.len());
        let mut num_users = 0;
        let mut num_items = 0;
        let mut max_epoch = 0;
        for pos in retained {
            let ev = events[pos];
            let epoch = grid_cfg_epoch(&grid_cfg, &ev)?;
            num_users = num_users.max(ev.user + 1);
            num_items = num_items.max(ev.item + 1);
            max_epoch = max_epoch.max(epoch);
            out_events.push(ev);
            out_epochs.push(epoch);
            out_splits.push(splits[pos]);
        }
        let num_epochs = (max_epoch + 1).max(min_epochs.unwrap_or(0));

        let mut ds = RatingDataset {
            events: out_events,
            epochs: out_epochs,
            splits: out_splits,
            by_user: vec![Vec::new(); num_users],
            by_item: vec![Vec::new(); num_items],
            num_users,
            num_items,
            grid: EpochGrid {
                epoch_length_days: grid_cfg.epoch_length_days,
                origin_day: grid_cfg.origin_day,
                num_epochs,
            },
        };
        ds.rebuild_indices();
        Ok(ds)
    }

    fn rebuild_indices(&mut self) {
        for v in self.by_user.iter_mut().chain(self.by_item.iter_mut()) {
            v.clear();
        }
        for (idx, ev) in self.events.iter().enumerate() {
            self.by_user[ev.user].push(idx);
            self.by_item[ev.item].push(idx);
        }
        // Chronological order, ties by counterpart id.
        let events = &self.events;
        for list in self.by_user.iter_mut() {
            list.sort_by_key(|&i| (events[i].day, events[i].item));
        }
        for list in self.by_item.iter_mut() {
            list.sort_by_key(|&i| (events[i].day, events[i].user));
        }
    }

    pub fn events(&self) -> &[RatingEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[inline]
    pub fn epoch(&self, event_idx: usize) -> usize {
        self.epochs[event_idx]
    }

    #[inline]
    pub fn split(&self, event_idx: usize) -> Split {
        self.splits[event_idx]
    }

    /// Event indices of a user, chronological.
    pub fn user_events(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    /// Event indices of an item, chronological.
    pub fn item_events(&self, item: usize) -> &[usize] {
        &self.by_item[item]
    }

    /// Indices of all train events, in event order.
    pub fn train_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.events.len()).filter(|&i| self.splits[i] == Split::Train)
    }

    pub fn test_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.events.len()).filter(|&i| self.splits[i] == Split::Test)
    }

    /// Largest epoch carrying at least one train event.
    pub fn last_train_epoch(&self) -> Option<usize> {
        self.train_indices().map(|i| self.epochs[i]).max()
    }

    /// Largest day-stamp among train events; the "present" that recency
    /// buckets are measured against.
    pub fn last_train_day(&self) -> Option<u32> {
        self.train_indices().map(|i| self.events[i].day).max()
    }

    /// Returns a copy with per-user temporal holdout tags: the
    /// chronologically last portion of each user's events becomes test.
    /// Users with a single event stay entirely in train; users with two or
    /// more always keep at least one train event.
    pub fn split_temporal(&self, test_fraction: f64) -> Result<RatingDataset> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "test_fraction must lie in (0,1), got {test_fraction}"
            )));
        }
        let mut out = self.clone();
        for tag in out.splits.iter_mut() {
            *tag = Split::Train;
        }
        for user in 0..self.num_users {
            let order = &self.by_user[user];
            let n = order.len();
            if n < 2 {
                continue;
            }
            let n_test = ((test_fraction * n as f64).round() as usize)
                .max(1)
                .min(n - 1);
            for &idx in &order[n - n_test..] {
                out.splits[idx] = Split::Test;
            }
        }
        Ok(out)
    }

    /// Re-tags events: the listed indices become test, everything else
    /// train. Used to carve validation folds out of the train split.
    pub fn with_test_indices(&self, test: &std::collections::BTreeSet<usize>) -> RatingDataset {
        let mut out = self.clone();
        for (idx, tag) in out.splits.iter_mut().enumerate() {
            *tag = if test.contains(&idx) {
                Split::Test
            } else {
                Split::Train
            };
        }
        out
    }

    /// Keeps only the given events (by index), preserving entity counts and
    /// the epoch grid. Splits are re-tagged from `splits`.
    pub fn restricted_to(&self, indices: &[usize], splits: &[Split]) -> Result<RatingDataset> {
        assert_eq!(indices.len(), splits.len());
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut out = RatingDataset {
            events: indices.iter().map(|&i| self.events[i]).collect(),
            epochs: indices.iter().map(|&i| self.epochs[i]).collect(),
            splits: splits.to_vec(),
            by_user: vec![Vec::new(); self.num_users],
            by_item: vec![Vec::new(); self.num_items],
            num_users: self.num_users,
            num_items: self.num_items,
            grid: self.grid,
        };
        out.rebuild_indices();
        Ok(out)
    }

    /// Writes the dataset as delimited text, one `user,item,day,rating`
    /// line per event, optionally with the split tag as a fifth column.
    pub fn write<P: AsRef<Path>>(&self, path: P, include_split: bool) -> Result<()> {
        let mut buf = String::new();
        for (idx, ev) in self.events.iter().enumerate() {
            if include_split {
                buf.push_str(&format!(
                    "{},{},{},{},{}\n",
                    ev.user, ev.item, ev.day, ev.rating, self.splits[idx]
                ));
            } else {
                buf.push_str(&format!("{},{},{},{}\n", ev.user, ev.item, ev.day, ev.rating));
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(buf.as_bytes())?;
        Ok(())
    }
}

fn grid_cfg_epoch(cfg: &GridConfig, ev: &RatingEvent) -> Result<usize> {
    if ev.day < cfg.origin_day {
        return Err(Error::MalformedLine {
            line: 0,
            reason: format!("day {} precedes grid origin {}", ev.day, cfg.origin_day),
        });
    }
    Ok(((ev.day - cfg.origin_day) / cfg.epoch_length_days) as usize)
}

/// Parses a comma- or tab-delimited ratings file. Columns are
/// `user,item,day,rating` with an optional fifth `train|test` column; a
/// single header line is tolerated.
pub fn ingest<P: AsRef<Path>>(path: P, grid_cfg: GridConfig) -> Result<RatingDataset> {
    let text = fs::read_to_string(path)?;
    let mut events = Vec::new();
    let mut splits = Vec::new();
    let mut saw_data = false;
    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(line, line_no) {
            Ok((ev, split)) => {
                if ev.day < grid_cfg.origin_day {
                    return Err(Error::MalformedLine {
                        line: line_no,
                        reason: format!(
                            "day {} precedes grid origin {}",
                            ev.day, grid_cfg.origin_day
                        ),
                    });
                }
                events.push(ev);
                splits.push(split.unwrap_or(Split::Train));
                saw_data = true;
            }
            Err(e) => {
                // A leading non-numeric line is an optional header.
                if !saw_data && line_no == first_nonempty_line(&text) {
                    if let Error::MalformedLine { .. } = e {
                        continue;
                    }
                }
                return Err(e);
            }
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyDataset);
    }
    RatingDataset::from_events(events, Some(splits), grid_cfg, None)
}

fn first_nonempty_line(text: &str) -> usize {
    for (idx, raw) in text.lines().enumerate() {
        if !raw.trim().is_empty() {
            return idx + 1;
        }
    }
    0
}

fn parse_line(line: &str, line_no: usize) -> Result<(RatingEvent, Option<Split>)> {
    let fields: Vec<&str> = if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split(',').map(str::trim).collect()
    };
    if fields.len() != 4 && fields.len() != 5 {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: format!("expected 4 or 5 fields, found {}", fields.len()),
        });
    }
    let parse_int = |s: &str, name: &str| -> Result<i64> {
        s.parse::<i64>().map_err(|_| Error::MalformedLine {
            line: line_no,
            reason: format!("field {name} is not an integer: {s:?}"),
        })
    };
    let user = parse_int(fields[0], "user_id")?;
    let item = parse_int(fields[1], "item_id")?;
    let day = parse_int(fields[2], "day")?;
    let rating = parse_int(fields[3], "rating")?;
    if user < 0 || item < 0 || day < 0 {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: "ids and day must be non-negative".into(),
        });
    }
    if !(1..=5).contains(&rating) {
        return Err(Error::RatingOutOfRange {
            line: line_no,
            rating,
        });
    }
    let split = if fields.len() == 5 {
        Some(match fields[4] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: format!("split tag must be train or test, found {other:?}"),
                })
            }
        })
    } else {
        None
    };
    Ok((
        RatingEvent {
            user: user as usize,
            item: item as usize,
            day: day as u32,
            rating: rating as u8,
        },
        split,
    ))
}

/// Parameters of the planted low-rank generator.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_epochs: usize,
    /// Mean probability that a (user, item, epoch) cell emits an event.
    pub density: f64,
    pub rank: usize,
    /// Per-epoch Gaussian drift scale applied to user factors.
    pub drift: f64,
    pub noise_sd: f64,
    /// Number of taste groups users and items are assigned to (`id % groups`).
    /// 1 disables the group structure.
    pub groups: usize,
    /// How strongly observations concentrate on same-group items, in [0, 1):
    /// 0 observes uniformly; higher values mean users mostly rate their own
    /// group's items, which is what keeps neighbourhood evidence sparse and
    /// varied instead of uniformly saturated.
    pub focus: f64,
    /// Probability that a user engages with a given same-group item at all.
    /// Engaged pairs are rated densely across epochs; unengaged group items
    /// stay unrated by the user while the rest of the group keeps rating
    /// them, so they become the natural explainable recommendations.
    pub engage: f64,
    /// Rating boost for same-group pairs, in stars.
    pub group_affinity: f64,
    pub epoch_length_days: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 50,
            num_items: 40,
            num_epochs: 6,
            density: 0.2,
            rank: 2,
            drift: 0.05,
            noise_sd: 0.25,
            groups: 4,
            focus: 0.85,
            engage: 0.7,
            group_affinity: 0.25,
            epoch_length_days: 30,
            seed: 42,
        }
    }
}

/// Generates ratings from a planted low-rank model with slowly drifting
/// user factors and a taste-group structure:
/// `r = clamp(round(⟨a_i(t), b_j⟩ + affinity·[same group] + noise), 1, 5)`.
///
/// Cells are observed with probability `density` on average, tilted by
/// `focus` toward same-group pairs (the mean over all pairs stays exactly
/// `density`). Deterministic under `cfg.seed`.
pub fn synth(cfg: &SynthConfig) -> Result<RatingDataset> {
    if cfg.num_users == 0
        || cfg.num_items == 0
        || cfg.num_epochs == 0
        || cfg.rank == 0
        || cfg.groups == 0
    {
        return Err(Error::ConfigInvalid(
            "synth counts must all be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.density) {
        return Err(Error::ConfigInvalid(format!(
            "density must lie in [0,1], got {}",
            cfg.density
        )));
    }
    if !(0.0..1.0).contains(&cfg.focus) {
        return Err(Error::ConfigInvalid(format!(
            "focus must lie in [0,1), got {}",
            cfg.focus
        )));
    }
    // In-group cells are observed with probability density·(1-focus+focus·G),
    // out-group with density·(1-focus); one item in G is in-group, so the
    // mean over items is exactly density.
    let g = cfg.groups as f64;
    let p_in = (cfg.density * (1.0 - cfg.focus + cfg.focus * g)).min(1.0);
    let p_out = cfg.density * (1.0 - cfg.focus);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // User factors per epoch, item factors stationary. Scales chosen so the
    // planted inner products centre near 3 stars.
    let item_scale = 3.0 / cfg.rank as f64;
    let mut user_factors = vec![vec![vec![0.0f64; cfg.rank]; cfg.num_epochs]; cfg.num_users];
    for uf in user_factors.iter_mut() {
        for k in 0..cfg.rank {
            uf[0][k] = rng.random_range(0.4..1.6);
        }
    }
    for t in 1..cfg.num_epochs {
        for uf in user_factors.iter_mut() {
            for k in 0..cfg.rank {
                uf[t][k] = uf[t - 1][k] + cfg.drift * unit.sample(&mut rng);
            }
        }
    }
    let mut item_factors = vec![vec![0.0f64; cfg.rank]; cfg.num_items];
    for itf in item_factors.iter_mut() {
        for v in itf.iter_mut() {
            *v = rng.random_range(0.4..1.6) * item_scale;
        }
    }

    let mut events = Vec::new();
    for i in 0..cfg.num_users {
        for j in 0..cfg.num_items {
            let same_group = cfg.groups == 1 || i % cfg.groups == j % cfg.groups;
            let p_obs = if same_group { p_in } else { p_out };
            for t in 0..cfg.num_epochs {
                if !rng.random_bool(p_obs) {
                    continue;
                }
                let day =
                    t as u32 * cfg.epoch_length_days + rng.random_range(0..cfg.epoch_length_days);
                let affinity = if same_group && cfg.groups > 1 {
                    cfg.group_affinity
                } else {
                    0.0
                };
                let raw = dot(&user_factors[i][t], &item_factors[j])
                    + affinity
                    + cfg.noise_sd * unit.sample(&mut rng);
                let rating = raw.round().clamp(1.0, 5.0) as u8;
                events.push(RatingEvent {
                    user: i,
                    item: j,
                    day,
                    rating,
                });
            }
        }
    }
    RatingDataset::from_events(
        events,
        None,
        GridConfig {
            epoch_length_days: cfg.epoch_length_days,
            origin_day: 0,
        },
        Some(cfg.num_epochs),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn epoch_binning() {
        let f = write_temp("0,7,45,4\n");
        let ds = ingest(
            f.path(),
            GridConfig {
                epoch_length_days: 30,
                origin_day: 0,
            },
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        let ev = ds.events()[0];
        assert_eq!((ev.user, ev.item, ev.rating), (0, 7, 4));
        assert_eq!(ds.epoch(0), 1);
    }

    #[test]
    fn rating_out_of_range_rejected() {
        let f = write_temp("0,7,45,9\n");
        let err = ingest(f.path(), GridConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::RatingOutOfRange { line: 1, rating: 9 }
        ));
    }

    #[test]
    fn three_line_file_counts() {
        let f = write_temp("0,0,1,3\n1,2,5,4\n2,1,40,5\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_users, 3);
        assert_eq!(ds.num_items, 3);
        assert_eq!(ds.grid.num_epochs, 2);
    }

    #[test]
    fn header_and_tabs_accepted() {
        let f = write_temp("user_id\titem_id\tday\trating\n0\t1\t3\t2\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.events()[0].rating, 2);
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = write_temp("0,0,1,3\nnot,a,valid,row\n");
        let err = ingest(f.path(), GridConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(
            ingest(f.path(), GridConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn duplicate_user_item_epoch_keeps_latest_day() {
        let f = write_temp("0,0,3,2\n0,0,7,5\n0,0,40,1\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        // Days 3 and 7 share epoch 0: the day-7 rating wins. Day 40 is epoch 1.
        assert_eq!(ds.len(), 2);
        let by_epoch: Vec<(usize, u8)> = (0..ds.len())
            .map(|i| (ds.epoch(i), ds.events()[i].rating))
            .collect();
        assert!(by_epoch.contains(&(0, 5)));
        assert!(by_epoch.contains(&(1, 1)));
    }

    #[test]
    fn temporal_split_last_of_three() {
        let f = write_temp("0,0,0,3\n0,1,30,4\n0,2,60,5\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        let split = ds.split_temporal(0.34).unwrap();
        let tags: Vec<Split> = (0..3).map(|i| split.split(i)).collect();
        assert_eq!(tags, vec![Split::Train, Split::Train, Split::Test]);
    }

    #[test]
    fn temporal_split_half_of_four() {
        let f = write_temp("0,0,0,3\n0,1,30,4\n0,2,60,5\n0,3,90,2\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        let split = ds.split_temporal(0.5).unwrap();
        let n_test = split.test_indices().count();
        assert_eq!(n_test, 2);
        assert_eq!(split.split(2), Split::Test);
        assert_eq!(split.split(3), Split::Test);
    }

    #[test]
    fn single_event_user_stays_in_train() {
        let f = write_temp("0,0,0,3\n1,0,0,4\n1,1,30,5\n");
        let ds = ingest(f.path(), GridConfig::default()).unwrap();
        let split = ds.split_temporal(0.9).unwrap();
        assert_eq!(split.split(0), Split::Train);
        // User 1 keeps at least one train event even at fraction 0.9.
        let u1_train = split
            .user_events(1)
            .iter()
            .filter(|&&i| split.split(i) == Split::Train)
            .count();
        assert_eq!(u1_train, 1);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = synth(&SynthConfig::default()).unwrap();
        let a = ds.split_temporal(0.25).unwrap();
        let b = ds.split_temporal(0.25).unwrap();
        let tags_a: Vec<Split> = (0..a.len()).map(|i| a.split(i)).collect();
        let tags_b: Vec<Split> = (0..b.len()).map(|i| b.split(i)).collect();
        assert_eq!(tags_a, tags_b);
    }

    #[test]
    fn round_trip_is_identical() {
        let ds = synth(&SynthConfig {
            num_users: 8,
            num_items: 6,
            ..SynthConfig::default()
        })
        .unwrap()
        .split_temporal(0.3)
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.write(f.path(), true).unwrap();
        let back = ingest(
            f.path(),
            GridConfig {
                epoch_length_days: ds.grid.epoch_length_days,
                origin_day: ds.grid.origin_day,
            },
        )
        .unwrap();
        assert_eq!(ds.events(), back.events());
        let tags: Vec<Split> = (0..ds.len()).map(|i| ds.split(i)).collect();
        let back_tags: Vec<Split> = (0..back.len()).map(|i| back.split(i)).collect();
        assert_eq!(tags, back_tags);

        // Second round trip reproduces the file byte for byte.
        let f2 = tempfile::NamedTempFile::new().unwrap();
        back.write(f2.path(), true).unwrap();
        assert_eq!(
            fs::read_to_string(f.path()).unwrap(),
            fs::read_to_string(f2.path()).unwrap()
        );
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        };
        let a = synth(&cfg).unwrap();
        let b = synth(&cfg).unwrap();
        assert_eq!(a.events(), b.events());
    }

    #[test]
    fn synth_noiseless_rank1_is_constant_per_pair() {
        let cfg = SynthConfig {
            num_users: 5,
            num_items: 5,
            num_epochs: 4,
            density: 1.0,
            rank: 1,
            drift: 0.0,
            noise_sd: 0.0,
            epoch_length_days: 30,
            seed: 3,
            ..SynthConfig::default()
        };
        let ds = synth(&cfg).unwrap();
        for u in 0..5 {
            for m in 0..5 {
                let ratings: Vec<u8> = ds
                    .user_events(u)
                    .iter()
                    .filter(|&&i| ds.events()[i].item == m)
                    .map(|&i| ds.events()[i].rating)
                    .collect();
                assert!(ratings.windows(2).all(|w| w[0] == w[1]), "pair ({u},{m})");
            }
        }
    }

    #[test]
    fn synth_event_count_near_expectation() {
        let ds = synth(&SynthConfig::default()).unwrap();
        // 50·40·6·0.2 = 2400 expected; allow a generous binomial band.
        let n = ds.len() as f64;
        assert!((n - 2400.0).abs() < 250.0, "count {n}");
    }

    #[test]
    fn epochs_stay_in_grid() {
        let ds = synth(&SynthConfig::default()).unwrap();
        for i in 0..ds.len() {
            assert!(ds.epoch(i) < ds.grid.num_epochs);
        }
    }

    #[test]
    fn views_index_every_event_once() {
        let ds = synth(&SynthConfig::default()).unwrap();
        let mut seen_user = vec![0usize; ds.len()];
        let mut seen_item = vec![0usize; ds.len()];
        for u in 0..ds.num_users {
            for &i in ds.user_events(u) {
                seen_user[i] += 1;
            }
        }
        for m in 0..ds.num_items {
            for &i in ds.item_events(m) {
                seen_item[i] += 1;
            }
        }
        assert!(seen_user.iter().all(|&c| c == 1));
        assert!(seen_item.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_is_a_partition() {
        let ds = synth(&SynthConfig::default()).unwrap();
        let split = ds.split_temporal(0.25).unwrap();
        let n_train = split.train_indices().count();
        let n_test = split.test_indices().count();
        assert_eq!(n_train + n_test, split.len());
        assert!(n_test > 0);
    }
}
