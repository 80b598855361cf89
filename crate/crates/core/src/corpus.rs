//! Interaction ingestion, k-core filtering, chronological sequences,
//! leave-one-out splitting and head/tail segmentation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Purpose};
use crate::{Error, ItemId, Result, UserId};

/// Fraction of users and items admitted to the head group.
pub const HEAD_FRACTION_PERCENT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: i64) -> Self {
        Interaction {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }
}

/// Orders raw identifiers numerically when both parse as integers, and
/// lexicographically otherwise. Numeric ids sort before textual ones.
pub fn compare_raw_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub delimiter: char,
    pub has_header: bool,
    /// Zero-based column positions of user, item and timestamp.
    pub columns: [usize; 3],
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: ',',
            has_header: false,
            columns: [0, 1, 2],
        }
    }
}

pub fn load_interactions(path: &Path, options: &LoadOptions) -> Result<Vec<Interaction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses delimiter-separated rows. Blank lines are ignored; every other
/// row must carry the three configured columns.
pub fn parse_interactions<R: BufRead>(reader: R, options: &LoadOptions) -> Result<Vec<Interaction>> {
    let [user_col, item_col, ts_col] = options.columns;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if idx == 0 && options.has_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(options.delimiter).map(str::trim).collect();
        let field = |col: usize, name: &str| -> Result<&str> {
            match fields.get(col) {
                Some(f) if !f.is_empty() => Ok(f),
                _ => Err(Error::Parse {
                    line: line_no,
                    message: format!("missing {name} in column {col}"),
                }),
            }
        };
        let user = field(user_col, "user id")?;
        let item = field(item_col, "item id")?;
        let ts_raw = field(ts_col, "timestamp")?;
        let timestamp = ts_raw.parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp {ts_raw:?} is not an integer"),
        })?;
        out.push(Interaction::new(user, item, timestamp));
    }
    Ok(out)
}

/// Repeatedly drops interactions of users or items with fewer than `k`
/// interactions until every remaining entity has at least `k`.
///
/// The result is the maximal such subset. An empty result is reported as
/// [`Error::EmptyAfterFilter`].
pub fn k_core_filter(log: &[Interaction], k: usize) -> Result<Vec<Interaction>> {
    if k == 0 {
        return Err(Error::Config("k_core must be at least 1".into()));
    }
    let mut current: Vec<&Interaction> = log.iter().collect();
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for it in &current {
            *user_deg.entry(it.user.as_str()).or_default() += 1;
            *item_deg.entry(it.item.as_str()).or_default() += 1;
        }
        let before = current.len();
        current.retain(|it| user_deg[it.user.as_str()] >= k && item_deg[it.item.as_str()] >= k);
        if current.len() == before {
            break;
        }
    }
    if current.is_empty() {
        return Err(Error::EmptyAfterFilter { k });
    }
    Ok(current.into_iter().cloned().collect())
}

/// Samples users until roughly `target_users` survive a re-applied k-core.
///
/// The sample size is tuned by bisection over the user count; the returned
/// log is always k-core filtered.
pub fn subsample_users(
    log: &[Interaction],
    target_users: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Interaction>> {
    let mut users: Vec<&str> = log.iter().map(|i| i.user.as_str()).collect();
    users.sort_by(|a, b| compare_raw_ids(a, b));
    users.dedup();
    let mut rng = rng::stream(seed, Purpose::Subsample, &[]);
    users.shuffle(&mut rng);

    let filtered_with = |n: usize| -> Result<Vec<Interaction>> {
        let keep: std::collections::HashSet<&str> = users[..n].iter().copied().collect();
        let sub: Vec<Interaction> = log
            .iter()
            .filter(|i| keep.contains(i.user.as_str()))
            .cloned()
            .collect();
        k_core_filter(&sub, k)
    };
    let count_users = |log: &[Interaction]| {
        let mut u: Vec<&str> = log.iter().map(|i| i.user.as_str()).collect();
        u.sort_unstable();
        u.dedup();
        u.len()
    };

    let full = k_core_filter(log, k)?;
    if count_users(&full) <= target_users {
        return Ok(full);
    }
    let (mut lo, mut hi) = (target_users.min(users.len()), users.len());
    let mut best = full;
    for _ in 0..24 {
        if lo >= hi {
            break;
        }
        let mid = lo + (hi - lo) / 2;
        match filtered_with(mid) {
            Ok(sub) => {
                let n = count_users(&sub);
                if n.abs_diff(target_users) < count_users(&best).abs_diff(target_users) {
                    best = sub;
                }
                match n.cmp(&target_users) {
                    Ordering::Less => lo = mid + 1,
                    Ordering::Greater => hi = mid,
                    Ordering::Equal => break,
                }
            }
            Err(Error::EmptyAfterFilter { .. }) => lo = mid + 1,
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// Leave-one-out split markers for one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_len: usize,
    pub valid: ItemId,
    pub test: ItemId,
}

/// Per-user chronological item sequences over dense ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStore {
    pub max_len: usize,
    /// Raw user id for each dense user index.
    pub users: Vec<String>,
    /// Raw item id for each dense item index.
    pub items: Vec<String>,
    pub sequences: Vec<Vec<ItemId>>,
    pub split: Option<Vec<Split>>,
}

impl SequenceStore {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn is_split(&self) -> bool {
        self.split.is_some()
    }

    /// Training prefix of `user`. Without a split the whole sequence counts
    /// as training data.
    pub fn train_prefix(&self, user: UserId) -> &[ItemId] {
        let seq = &self.sequences[user as usize];
        match &self.split {
            Some(split) => &seq[..split[user as usize].train_len],
            None => seq,
        }
    }

    pub fn split_of(&self, user: UserId) -> Option<Split> {
        self.split.as_ref().map(|s| s[user as usize])
    }

    pub(crate) fn require_split(&self) -> Result<&[Split]> {
        self.split
            .as_deref()
            .ok_or_else(|| Error::Config("sequence store has no leave-one-out split".into()))
    }
}

/// Groups a (k-core filtered) log into chronological per-user sequences,
/// keeping the most recent `max_len` interactions of each user.
///
/// Equal timestamps are ordered by ascending item id, then input order.
pub fn build_sequences(log: &[Interaction], max_len: usize) -> Result<SequenceStore> {
    if max_len < 3 {
        return Err(Error::Config("max_len must be at least 3".into()));
    }
    let mut by_user: BTreeMap<RawKey<'_>, Vec<(usize, &Interaction)>> = BTreeMap::new();
    for (pos, it) in log.iter().enumerate() {
        by_user.entry(RawKey(&it.user)).or_default().push((pos, it));
    }
    let mut kept: Vec<(&str, Vec<&Interaction>)> = Vec::with_capacity(by_user.len());
    for (user, mut rows) in by_user {
        rows.sort_by(|(pa, a), (pb, b)| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| compare_raw_ids(&a.item, &b.item))
                .then_with(|| pa.cmp(pb))
        });
        let start = rows.len().saturating_sub(max_len);
        kept.push((user.0, rows[start..].iter().map(|(_, it)| *it).collect()));
    }

    let mut items: Vec<&str> = kept
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|it| it.item.as_str()))
        .collect();
    items.sort_by(|a, b| compare_raw_ids(a, b));
    items.dedup();
    let item_index: HashMap<&str, ItemId> = items
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as ItemId))
        .collect();

    Ok(SequenceStore {
        max_len,
        users: kept.iter().map(|(u, _)| u.to_string()).collect(),
        items: items.iter().map(|s| s.to_string()).collect(),
        sequences: kept
            .iter()
            .map(|(_, rows)| rows.iter().map(|it| item_index[it.item.as_str()]).collect())
            .collect(),
        split: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RawKey<'a>(&'a str);

impl Ord for RawKey<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_raw_ids(self.0, other.0)
    }
}

impl PartialOrd for RawKey<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marks the last item of each sequence as test, the one before as
/// validation, and the rest as training.
pub fn leave_one_out_split(mut store: SequenceStore) -> Result<SequenceStore> {
    let mut split = Vec::with_capacity(store.sequences.len());
    for (u, seq) in store.sequences.iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            return Err(Error::ShortSequence {
                user: store.users[u].clone(),
                len: n,
            });
        }
        split.push(Split {
            train_len: n - 2,
            valid: seq[n - 2],
            test: seq[n - 1],
        });
    }
    store.split = Some(split);
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceClass {
    HeadPreferring,
    TailPreferring,
}

/// Head/tail membership of users and items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationFile", into = "SegmentationFile")]
pub struct Segmentation {
    head_users: Vec<UserId>,
    tail_users: Vec<UserId>,
    head_items: Vec<ItemId>,
    tail_items: Vec<ItemId>,
    beta: f64,
    user_is_head: Vec<bool>,
    item_is_head: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct SegmentationFile {
    beta: f64,
    head_users: Vec<UserId>,
    tail_users: Vec<UserId>,
    head_items: Vec<ItemId>,
    tail_items: Vec<ItemId>,
}

impl TryFrom<SegmentationFile> for Segmentation {
    type Error = String;

    fn try_from(f: SegmentationFile) -> Result<Self, String> {
        let flags = |head: &[u32], tail: &[u32]| -> Result<Vec<bool>, String> {
            let n = head.len() + tail.len();
            let mut seen = vec![None; n];
            for (&id, is_head) in head.iter().map(|i| (i, true)).chain(tail.iter().map(|i| (i, false))) {
                let slot = seen
                    .get_mut(id as usize)
                    .ok_or_else(|| format!("id {id} outside 0..{n}"))?;
                if slot.replace(is_head).is_some() {
                    return Err(format!("id {id} listed twice"));
                }
            }
            Ok(seen.into_iter().map(|s| s.unwrap_or(false)).collect())
        };
        Ok(Segmentation {
            user_is_head: flags(&f.head_users, &f.tail_users)?,
            item_is_head: flags(&f.head_items, &f.tail_items)?,
            head_users: f.head_users,
            tail_users: f.tail_users,
            head_items: f.head_items,
            tail_items: f.tail_items,
            beta: f.beta,
        })
    }
}

impl From<Segmentation> for SegmentationFile {
    fn from(s: Segmentation) -> Self {
        SegmentationFile {
            beta: s.beta,
            head_users: s.head_users,
            tail_users: s.tail_users,
            head_items: s.head_items,
            tail_items: s.tail_items,
        }
    }
}

impl Segmentation {
    /// Builds a segmentation from per-entity head flags.
    pub fn from_flags(user_is_head: Vec<bool>, item_is_head: Vec<bool>, beta: f64) -> Self {
        let split = |flags: &[bool]| {
            let (mut head, mut tail) = (Vec::new(), Vec::new());
            for (i, &h) in flags.iter().enumerate() {
                if h { head.push(i as u32) } else { tail.push(i as u32) }
            }
            (head, tail)
        };
        let (head_users, tail_users) = split(&user_is_head);
        let (head_items, tail_items) = split(&item_is_head);
        Segmentation {
            head_users,
            tail_users,
            head_items,
            tail_items,
            beta,
            user_is_head,
            item_is_head,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn head_users(&self) -> &[UserId] {
        &self.head_users
    }

    pub fn tail_users(&self) -> &[UserId] {
        &self.tail_users
    }

    pub fn head_items(&self) -> &[ItemId] {
        &self.head_items
    }

    pub fn tail_items(&self) -> &[ItemId] {
        &self.tail_items
    }

    pub fn n_users(&self) -> usize {
        self.user_is_head.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_is_head.len()
    }

    pub fn is_head_item(&self, item: ItemId) -> bool {
        self.item_is_head[item as usize]
    }

    pub fn is_tail_item(&self, item: ItemId) -> bool {
        !self.item_is_head[item as usize]
    }

    pub fn is_head_user(&self, user: UserId) -> bool {
        self.user_is_head[user as usize]
    }

    /// Classifies a sequence with this segmentation's own `beta`.
    pub fn classify(&self, seq: &[ItemId]) -> Result<PreferenceClass> {
        classify_sequence(seq, self, self.beta)
    }
}

/// Number of head entities among `n`: ceil(20% of n).
pub fn head_quota(n: usize) -> usize {
    (n * HEAD_FRACTION_PERCENT).div_ceil(100)
}

/// Marks the top 20% of `scores` (descending, ties by ascending index) as head.
fn top_fraction(scores: &[usize]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
    let mut flags = vec![false; scores.len()];
    for &i in order.iter().take(head_quota(scores.len())) {
        flags[i] = true;
    }
    flags
}

/// Item interaction counts over training prefixes.
pub fn item_popularity(store: &SequenceStore) -> Vec<usize> {
    let mut counts = vec![0usize; store.n_items()];
    for u in 0..store.n_users() {
        for &v in store.train_prefix(u as UserId) {
            counts[v as usize] += 1;
        }
    }
    counts
}

/// Ranks users by training length and items by training popularity and
/// admits the top 20% of each (ceil) to the head group.
pub fn segment(store: &SequenceStore, beta: f64) -> Result<Segmentation> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta must lie in (0,1), got {beta}")));
    }
    store.require_split()?;
    let user_len: Vec<usize> = (0..store.n_users())
        .map(|u| store.train_prefix(u as UserId).len())
        .collect();
    Ok(Segmentation::from_flags(
        top_fraction(&user_len),
        top_fraction(&item_popularity(store)),
        beta,
    ))
}

/// A sequence prefers the tail iff its share of tail items strictly
/// exceeds `beta`.
pub fn classify_sequence(seq: &[ItemId], segmentation: &Segmentation, beta: f64) -> Result<PreferenceClass> {
    if seq.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let tail = seq.iter().filter(|&&v| segmentation.is_tail_item(v)).count();
    if tail as f64 / seq.len() as f64 > beta {
        Ok(PreferenceClass::TailPreferring)
    } else {
        Ok(PreferenceClass::HeadPreferring)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub avg_length: f64,
    pub sparsity: f64,
}

/// Counts over the full stored sequences, ignoring any split.
pub fn dataset_stats(store: &SequenceStore) -> DatasetStats {
    let n_users = store.n_users();
    let n_items = store.n_items();
    let n_interactions: usize = store.sequences.iter().map(Vec::len).sum();
    if n_users == 0 || n_items == 0 {
        return DatasetStats {
            n_users,
            n_items,
            n_interactions,
            avg_length: 0.0,
            sparsity: 0.0,
        };
    }
    DatasetStats {
        n_users,
        n_items,
        n_interactions,
        avg_length: n_interactions as f64 / n_users as f64,
        sparsity: 1.0 - n_interactions as f64 / (n_users as f64 * n_items as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log(rows: &[(&str, &str, i64)]) -> Vec<Interaction> {
        rows.iter().map(|&(u, i, t)| Interaction::new(u, i, t)).collect()
    }

    fn store_from(seqs: Vec<Vec<ItemId>>, n_items: usize) -> SequenceStore {
        SequenceStore {
            max_len: 50,
            users: (0..seqs.len()).map(|u| u.to_string()).collect(),
            items: (0..n_items).map(|i| i.to_string()).collect(),
            sequences: seqs,
            split: None,
        }
    }

    #[test]
    fn parses_rows_and_reports_bad_lines() {
        let opts = LoadOptions::default();
        let ok = parse_interactions("u1,a,1\nu1,b,2\nu2,a,3\n".as_bytes(), &opts).unwrap();
        assert_eq!(ok.len(), 3);
        assert_eq!(ok[2], Interaction::new("u2", "a", 3));

        let err = parse_interactions("u1,a,1\nu1,b\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_interactions("u1,a,x\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn header_delimiter_and_column_layout() {
        let opts = LoadOptions {
            delimiter: '\t',
            has_header: true,
            columns: [0, 1, 3],
        };
        let rows = parse_interactions("user\titem\trating\tts\nA\tB\t5.0\t99\n".as_bytes(), &opts).unwrap();
        assert_eq!(rows, vec![Interaction::new("A", "B", 99)]);
    }

    #[test]
    fn duplicates_are_retained() {
        let text = "u,a,1\nu,a,1\nu,b,2\n";
        let rows = parse_interactions(text.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(rows.len(), text.lines().count());
    }

    #[test]
    fn k_core_one_is_identity_without_isolated_entities() {
        let l = log(&[("u1", "a", 1), ("u2", "b", 2), ("u2", "a", 3)]);
        assert_eq!(k_core_filter(&l, 1).unwrap(), l);
    }

    #[test]
    fn k_core_rejects_zero_and_reports_empty() {
        assert!(matches!(k_core_filter(&[], 0), Err(Error::Config(_))));
        let l = log(&[("u1", "a", 1)]);
        assert!(matches!(k_core_filter(&l, 2), Err(Error::EmptyAfterFilter { k: 2 })));
    }

    #[test]
    fn k_core_drops_light_user_then_rechecks() {
        // Four users share item x; u4 has a single interaction.
        let l = log(&[
            ("u1", "x", 1),
            ("u1", "y", 2),
            ("u2", "x", 1),
            ("u2", "y", 2),
            ("u3", "x", 1),
            ("u3", "y", 2),
            ("u4", "x", 1),
        ]);
        let out = k_core_filter(&l, 2).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|i| i.user != "u4"));
    }

    #[test]
    fn ordering_and_tie_break() {
        let l = log(&[("u", "c", 5), ("u", "b", 5), ("u", "a", 9), ("u", "d", 1)]);
        let store = build_sequences(&l, 50).unwrap();
        let raw: Vec<&str> = store.sequences[0].iter().map(|&v| store.items[v as usize].as_str()).collect();
        assert_eq!(raw, ["d", "b", "c", "a"]);
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        assert_eq!(compare_raw_ids("9", "10"), Ordering::Less);
        assert_eq!(compare_raw_ids("b", "a"), Ordering::Greater);
        assert_eq!(compare_raw_ids("3", "a"), Ordering::Less);
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let rows: Vec<Interaction> = (0..60).map(|t| Interaction::new("u", format!("i{t}"), t)).collect();
        let store = leave_one_out_split(build_sequences(&rows, 50).unwrap()).unwrap();
        assert_eq!(store.sequences[0].len(), 50);
        let prefix = store.train_prefix(0);
        assert_eq!(prefix.len(), 48);
        let first = &store.items[prefix[0] as usize];
        assert_eq!(first, "i10");
        let split = store.split_of(0).unwrap();
        assert_eq!(store.items[split.valid as usize], "i58");
        assert_eq!(store.items[split.test as usize], "i59");
    }

    #[test]
    fn split_definition_and_short_sequence() {
        let store = leave_one_out_split(store_from(vec![vec![0, 1, 2, 3, 4]], 5)).unwrap();
        assert_eq!(store.train_prefix(0), &[0, 1, 2]);
        assert_eq!(store.split_of(0).unwrap(), Split { train_len: 3, valid: 3, test: 4 });

        let err = leave_one_out_split(store_from(vec![vec![0, 1]], 2)).unwrap_err();
        assert!(matches!(err, Error::ShortSequence { len: 2, .. }));
    }

    #[test]
    fn ten_users_two_head() {
        let seqs = (0..10).map(|u| vec![0; 3 + u]).collect();
        let store = leave_one_out_split(store_from(seqs, 1)).unwrap();
        let seg = segment(&store, 0.5).unwrap();
        assert_eq!(seg.head_users(), &[8, 9]);
        assert_eq!(seg.tail_users().len(), 8);
    }

    #[test]
    fn equal_popularity_admits_lowest_ids() {
        let seqs = vec![(0..10).chain([0, 0]).collect()];
        let store = leave_one_out_split(store_from(seqs, 10)).unwrap();
        let seg = segment(&store, 0.5).unwrap();
        assert_eq!(seg.head_items(), &[0, 1]);
    }

    #[test]
    fn crafted_popularity_head() {
        // training popularity [9,7,7,3,1]
        let mut train = Vec::new();
        for (item, count) in [9usize, 7, 7, 3, 1].iter().enumerate() {
            train.extend(std::iter::repeat_n(item as ItemId, *count));
        }
        train.extend([4, 4]); // valid/test, excluded from popularity
        let store = leave_one_out_split(store_from(vec![train], 5)).unwrap();
        assert_eq!(item_popularity(&store), vec![9, 7, 7, 3, 1]);
        let seg = segment(&store, 0.5).unwrap();
        assert_eq!(seg.head_items(), &[0]);
    }

    #[test]
    fn segment_validates_beta_and_split() {
        let store = store_from(vec![vec![0, 0, 0]], 1);
        assert!(matches!(segment(&store, 0.5), Err(Error::Config(_))));
        let store = leave_one_out_split(store).unwrap();
        assert!(matches!(segment(&store, 1.2), Err(Error::Config(_))));
    }

    #[test]
    fn classify_uses_strict_inequality() {
        let seg = Segmentation::from_flags(vec![true], vec![true, true, true, false, false], 0.4);
        assert_eq!(classify_sequence(&[3, 4, 3], &seg, 0.5).unwrap(), PreferenceClass::TailPreferring);
        assert_eq!(classify_sequence(&[0, 1, 2], &seg, 0.5).unwrap(), PreferenceClass::HeadPreferring);
        assert_eq!(classify_sequence(&[0, 3, 1, 4, 2], &seg, 0.4).unwrap(), PreferenceClass::HeadPreferring);
        assert!(matches!(classify_sequence(&[], &seg, 0.4), Err(Error::EmptyPrefix)));
    }

    #[test]
    fn stats_small_and_empty() {
        let store = store_from(vec![vec![0, 1], vec![0]], 2);
        let s = dataset_stats(&store);
        assert_eq!((s.n_users, s.n_items, s.n_interactions), (2, 2, 3));
        assert_eq!(s.avg_length, 1.5);
        assert_eq!(s.sparsity, 0.25);

        let empty = dataset_stats(&store_from(vec![], 0));
        assert_eq!(empty, DatasetStats { n_users: 0, n_items: 0, n_interactions: 0, avg_length: 0.0, sparsity: 0.0 });
    }

    #[test]
    fn segmentation_json_round_trip() {
        let seg = Segmentation::from_flags(vec![false, true], vec![true, false, false], 0.3);
        let json = serde_json::to_string(&seg).unwrap();
        let back: Segmentation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, seg);
        assert!(serde_json::from_str::<Segmentation>(
            r#"{"beta":0.5,"head_users":[0],"tail_users":[0],"head_items":[],"tail_items":[]}"#
        )
        .is_err());
    }

    fn arb_log() -> impl Strategy<Value = Vec<Interaction>> {
        prop::collection::vec((0u8..8, 0u8..8, 0i64..20), 0..60).prop_map(|rows| {
            rows.into_iter()
                .map(|(u, i, t)| Interaction::new(format!("u{u}"), format!("i{i}"), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn k_core_is_idempotent(l in arb_log(), k in 1usize..4) {
            if let Ok(once) = k_core_filter(&l, k) {
                prop_assert_eq!(k_core_filter(&once, k).unwrap(), once);
            }
        }

        #[test]
        fn classify_ignores_order(mut seq in prop::collection::vec(0u32..6, 1..12), beta in 0.05f64..0.95) {
            let seg = Segmentation::from_flags(vec![true], vec![true, true, false, false, true, false], beta);
            let a = classify_sequence(&seq, &seg, beta).unwrap();
            seq.reverse();
            let half = seq.len() / 2;
            seq.rotate_left(half);
            prop_assert_eq!(a, classify_sequence(&seq, &seg, beta).unwrap());
        }

        #[test]
        fn adding_interactions_keeps_head_items_head(
            pops in prop::collection::vec(0usize..6, 5..12),
            bump_item in 0usize..12,
            extra in 1usize..4,
        ) {
            let n = pops.len();
            let bump_item = bump_item % n;
            let build = |pops: &[usize]| {
                let mut train: Vec<ItemId> = Vec::new();
                for (i, &c) in pops.iter().enumerate() {
                    train.extend(std::iter::repeat_n(i as ItemId, c));
                }
                train.extend([0, 0]);
                leave_one_out_split(store_from(vec![train], n)).unwrap()
            };
            let before = segment(&build(&pops), 0.5).unwrap();
            let mut bumped = pops.clone();
            bumped[bump_item] += extra;
            let after = segment(&build(&bumped), 0.5).unwrap();
            if before.is_head_item(bump_item as ItemId) {
                prop_assert!(after.is_head_item(bump_item as ItemId));
            }
        }
    }
}
