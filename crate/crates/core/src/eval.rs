//! Full-ranking leave-one-out evaluation.
//!
//! Every real item is scored by `H_u . e_v`; the target's rank counts every
//! other item scoring at least as high (ties go against the target). Metrics
//! are reported overall and per head/tail item (keyed on the target) and
//! head/tail user.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Segmentation, SequenceStore};
use crate::model::ModelState;
use crate::{Error, ItemId, Result, UserId};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub user: UserId,
    pub target: ItemId,
    /// 1-based.
    pub rank: usize,
}

/// Input sequence and target for `user` in `phase`: validation predicts the
/// validation item from the training prefix, test predicts the test item
/// from training prefix plus validation item.
pub fn phase_input(store: &SequenceStore, user: UserId, phase: Phase) -> Result<(Vec<ItemId>, ItemId)> {
    let split = store.require_split()?[user as usize];
    let seq = &store.sequences[user as usize];
    Ok(match phase {
        Phase::Valid => (seq[..split.train_len].to_vec(), split.valid),
        Phase::Test => (seq[..split.train_len + 1].to_vec(), split.test),
    })
}

/// Pessimistic 1-based rank of `target`.
pub fn rank_of(scores: &[f64], target: ItemId) -> usize {
    let t = scores[target as usize];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &s)| v != target as usize && s >= t)
        .count()
}

/// The `k` best items, by descending score then ascending id.
pub fn top_k_items(scores: &[f64], k: usize) -> Vec<ItemId> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.into_iter().map(|i| i as ItemId).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOptions {
    /// Push already-seen input items (other than the target) to the bottom.
    pub filter_seen: bool,
}

fn user_scores(model: &ModelState, input: &[ItemId], target: ItemId, options: RankOptions) -> Result<Vec<f64>> {
    let h = model.encode(input)?;
    let mut scores = model.score_all(&h);
    if options.filter_seen {
        for &v in input {
            if v != target {
                scores[v as usize] = f64::NEG_INFINITY;
            }
        }
    }
    Ok(scores)
}

pub fn full_rank(model: &ModelState, store: &SequenceStore, user: UserId, phase: Phase) -> Result<RankingResult> {
    let (input, target) = phase_input(store, user, phase)?;
    let scores = user_scores(model, &input, target, RankOptions::default())?;
    Ok(RankingResult {
        user,
        target,
        rank: rank_of(&scores, target),
    })
}

pub fn hit_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    check(results, k)?;
    Ok(results.iter().filter(|r| r.rank <= k).count() as f64 / results.len() as f64)
}

pub fn ndcg_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    check(results, k)?;
    Ok(results.iter().map(|r| ndcg_gain(r.rank, k)).sum::<f64>() / results.len() as f64)
}

fn ndcg_gain(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

fn check(results: &[RankingResult], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if results.is_empty() {
        return Err(Error::Empty("ranking results"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Overall,
    HeadItem,
    TailItem,
    HeadUser,
    TailUser,
}

impl Segment {
    pub const ALL: [Segment; 5] = [
        Segment::Overall,
        Segment::HeadItem,
        Segment::TailItem,
        Segment::HeadUser,
        Segment::TailUser,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Segment::Overall => "Overall",
            Segment::HeadItem => "Head Item",
            Segment::TailItem => "Tail Item",
            Segment::HeadUser => "Head User",
            Segment::TailUser => "Tail User",
        }
    }

    pub fn contains(self, r: &RankingResult, seg: &Segmentation) -> bool {
        match self {
            Segment::Overall => true,
            Segment::HeadItem => seg.is_head_item(r.target),
            Segment::TailItem => seg.is_tail_item(r.target),
            Segment::HeadUser => seg.is_head_user(r.user),
            Segment::TailUser => !seg.is_head_user(r.user),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub count: usize,
    pub hit_ratio: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

pub const REPORT_SCHEMA: &str = "tada.metric_report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub phase: Phase,
    pub ks: Vec<usize>,
    /// Empty segments are absent rather than zero.
    pub segments: BTreeMap<Segment, SegmentMetrics>,
    pub tail_coverage: BTreeMap<usize, f64>,
}

impl MetricReport {
    pub fn hit(&self, segment: Segment, k: usize) -> Option<f64> {
        self.segments.get(&segment).and_then(|m| m.hit_ratio.get(&k).copied())
    }

    pub fn ndcg(&self, segment: Segment, k: usize) -> Option<f64> {
        self.segments.get(&segment).and_then(|m| m.ndcg.get(&k).copied())
    }

    /// Element-wise mean of reports sharing phase, Ks and segments.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports.first().ok_or(Error::Empty("reports to average"))?;
        let n = reports.len() as f64;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.ks != first.ks || r.phase != first.phase || r.segments.keys().ne(first.segments.keys()) {
                return Err(Error::Config("reports differ in structure".into()));
            }
        }
        let avg = |get: &dyn Fn(&MetricReport) -> f64| reports.iter().map(get).sum::<f64>() / n;
        for (seg, m) in out.segments.iter_mut() {
            for &k in &first.ks {
                m.hit_ratio.insert(k, avg(&|r| r.segments[seg].hit_ratio[&k]));
                m.ndcg.insert(k, avg(&|r| r.segments[seg].ndcg[&k]));
            }
        }
        for (&k, v) in out.tail_coverage.iter_mut() {
            *v = avg(&|r| r.tail_coverage.get(&k).copied().unwrap_or(0.0));
        }
        Ok(out)
    }
}

/// HR/NDCG per segment. Tail coverage is left empty; see [`evaluate`].
pub fn segmented_report(
    results: &[RankingResult],
    segmentation: &Segmentation,
    ks: &[usize],
    phase: Phase,
) -> Result<MetricReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("Ks must be non-empty and positive".into()));
    }
    let mut segments = BTreeMap::new();
    for segment in Segment::ALL {
        let subset: Vec<RankingResult> = results
            .iter()
            .filter(|r| segment.contains(r, segmentation))
            .copied()
            .collect();
        if subset.is_empty() {
            continue;
        }
        let mut m = SegmentMetrics {
            count: subset.len(),
            hit_ratio: BTreeMap::new(),
            ndcg: BTreeMap::new(),
        };
        for &k in ks {
            m.hit_ratio.insert(k, hit_at_k(&subset, k)?);
            m.ndcg.insert(k, ndcg_at_k(&subset, k)?);
        }
        segments.insert(segment, m);
    }
    Ok(MetricReport {
        schema: REPORT_SCHEMA.into(),
        phase,
        ks: ks.to_vec(),
        segments,
        tail_coverage: BTreeMap::new(),
    })
}

/// `|union of tail items in the lists| / |tail items|`.
pub fn tail_coverage_from_lists(lists: &[Vec<ItemId>], segmentation: &Segmentation) -> f64 {
    let n_tail = segmentation.tail_items().len();
    if n_tail == 0 {
        return 0.0;
    }
    let covered: BTreeSet<ItemId> = lists
        .iter()
        .flatten()
        .copied()
        .filter(|&v| segmentation.is_tail_item(v))
        .collect();
    covered.len() as f64 / n_tail as f64
}

/// Tail coverage of the top-`k` test-phase lists of `users`.
pub fn tail_coverage_at_k(
    model: &ModelState,
    store: &SequenceStore,
    users: &[UserId],
    k: usize,
    segmentation: &Segmentation,
) -> Result<f64> {
    let lists = users
        .par_iter()
        .map(|&u| {
            let (input, target) = phase_input(store, u, Phase::Test)?;
            Ok(top_k_items(&user_scores(model, &input, target, RankOptions::default())?, k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tail_coverage_from_lists(&lists, segmentation))
}

/// Ranks every user once and assembles the full report, tail coverage
/// included.
pub fn evaluate(
    model: &ModelState,
    store: &SequenceStore,
    segmentation: &Segmentation,
    phase: Phase,
    ks: &[usize],
    options: RankOptions,
) -> Result<MetricReport> {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let per_user = (0..store.n_users() as UserId)
        .into_par_iter()
        .map(|u| {
            let (input, target) = phase_input(store, u, phase)?;
            let scores = user_scores(model, &input, target, options)?;
            let result = RankingResult {
                user: u,
                target,
                rank: rank_of(&scores, target),
            };
            Ok((result, top_k_items(&scores, k_max)))
        })
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<RankingResult> = per_user.iter().map(|(r, _)| *r).collect();
    let mut report = segmented_report(&results, segmentation, ks, phase)?;
    for &k in ks {
        let lists: Vec<Vec<ItemId>> = per_user.iter().map(|(_, l)| l[..k.min(l.len())].to_vec()).collect();
        report.tail_coverage.insert(k, tail_coverage_from_lists(&lists, segmentation));
    }
    Ok(report)
}

/// Aligned table with one row per segment.
pub fn render_table(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10} {:>6}", "Segment", "Cases");
    for &k in &report.ks {
        let _ = write!(out, " {:>8} {:>8}", format!("H@{k}"), format!("N@{k}"));
    }
    out.push('\n');
    for segment in Segment::ALL {
        let _ = write!(out, "{:<10}", segment.label());
        match report.segments.get(&segment) {
            Some(m) => {
                let _ = write!(out, " {:>6}", m.count);
                for k in &report.ks {
                    let _ = write!(out, " {:>8.4} {:>8.4}", m.hit_ratio[k], m.ndcg[k]);
                }
            }
            None => {
                let _ = write!(out, " {:>6}", "-");
            }
        }
        out.push('\n');
    }
    if !report.tail_coverage.is_empty() {
        let _ = write!(out, "{:<10} {:>6}", "TCov", "");
        for (k, v) in &report.tail_coverage {
            let _ = write!(out, " {:>8} {:>8.4}", format!("@{k}"), v);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(user: u32, target: u32, rank: usize) -> RankingResult {
        RankingResult { user, target, rank }
    }

    #[test]
    fn rank_policy() {
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 1), 1);
        assert_eq!(rank_of(&[0.5; 7], 3), 7);
        assert_eq!(rank_of(&[0.2, 0.5, 0.5, 0.1], 1), 2);
    }

    #[test]
    fn per_case_contributions() {
        assert_eq!(ndcg_at_k(&[r(0, 0, 1)], 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[r(0, 0, 3)], 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[r(0, 0, 11)], 10).unwrap(), 0.0);
        assert_eq!(hit_at_k(&[r(0, 0, 11)], 10).unwrap(), 0.0);
        assert!(hit_at_k(&[], 10).is_err());
        assert!(ndcg_at_k(&[r(0, 0, 1)], 0).is_err());
    }

    fn seg6() -> Segmentation {
        // users 0,1 head; items 0,1 head
        Segmentation::from_flags(
            vec![true, true, false, false, false, false],
            vec![true, true, false, false, false, false],
            0.5,
        )
    }

    #[test]
    fn six_case_fixture() {
        let results = [r(0, 0, 1), r(1, 3, 4), r(2, 1, 12), r(3, 2, 2), r(4, 5, 30), r(5, 0, 7)];
        let report = segmented_report(&results, &seg6(), &[5, 10], Phase::Test).unwrap();
        // head items: users 0,2,5 ranks 1,12,7 ; tail items: users 1,3,4 ranks 4,2,30
        assert_eq!(report.hit(Segment::HeadItem, 10), Some(2.0 / 3.0));
        assert_eq!(report.hit(Segment::HeadItem, 5), Some(1.0 / 3.0));
        assert_eq!(report.hit(Segment::TailItem, 5), Some(2.0 / 3.0));
        let tail_ndcg = (1.0 / 5f64.log2() + 1.0 / 3f64.log2()) / 3.0;
        assert!((report.ndcg(Segment::TailItem, 10).unwrap() - tail_ndcg).abs() < 1e-15);
        // head users 0,1 ranks 1,4
        assert_eq!(report.hit(Segment::HeadUser, 5), Some(1.0));
        assert_eq!(report.hit(Segment::TailUser, 10), Some(0.5));
        let c = |s| report.segments[&s].count;
        assert_eq!(c(Segment::HeadUser) + c(Segment::TailUser), c(Segment::Overall));
        assert_eq!(c(Segment::HeadItem) + c(Segment::TailItem), 6);
    }

    #[test]
    fn empty_segment_is_absent() {
        let report = segmented_report(&[r(2, 0, 1), r(3, 1, 2)], &seg6(), &[5], Phase::Test).unwrap();
        assert!(!report.segments.contains_key(&Segment::TailItem));
        assert!(report.hit(Segment::TailItem, 5).is_none());
        assert!(render_table(&report).contains("Tail Item       -"));
    }

    #[test]
    fn coverage_extremes() {
        let seg = seg6();
        assert_eq!(tail_coverage_from_lists(&[vec![0, 1], vec![1]], &seg), 0.0);
        assert_eq!(tail_coverage_from_lists(&[vec![2, 3], vec![4, 5, 0]], &seg), 1.0);
        assert_eq!(tail_coverage_from_lists(&[vec![2, 2, 3]], &seg), 0.5);
    }

    #[test]
    fn top_k_order() {
        assert_eq!(top_k_items(&[0.1, 0.7, 0.7, 0.2], 3), vec![1, 2, 3]);
        assert_eq!(top_k_items(&[0.1], 3), vec![0]);
    }

    #[test]
    fn mean_of_reports() {
        let a = segmented_report(&[r(0, 0, 1), r(2, 3, 9)], &seg6(), &[5], Phase::Test).unwrap();
        let b = segmented_report(&[r(0, 0, 6), r(2, 3, 2)], &seg6(), &[5], Phase::Test).unwrap();
        let m = MetricReport::mean(&[a, b]).unwrap();
        assert_eq!(m.hit(Segment::Overall, 5), Some(0.5));
        assert!(MetricReport::mean(&[]).is_err());
    }

    proptest! {
        #[test]
        fn shifting_scores_keeps_ranks(scores in prop::collection::vec(-3.0f64..3.0, 2..30), shift in -10.0f64..10.0, t in 0usize..30) {
            let t = (t % scores.len()) as ItemId;
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            // exact ties can appear or vanish under rounding, so compare on dyadic grids
            let grid = |v: &[f64]| v.iter().map(|s| (s * 64.0).round() / 64.0).collect::<Vec<_>>();
            let base = grid(&scores);
            let moved: Vec<f64> = base.iter().map(|s| s + shift.round()).collect();
            prop_assert_eq!(rank_of(&base, t), rank_of(&moved, t));
            let _ = shifted;
        }

        #[test]
        fn ndcg_bounded_by_hit(ranks in prop::collection::vec(1usize..60, 1..40), k in 1usize..30) {
            let results: Vec<_> = ranks.iter().enumerate().map(|(i, &rank)| r(i as u32 % 6, 0, rank)).collect();
            let h = hit_at_k(&results, k).unwrap();
            let n = ndcg_at_k(&results, k).unwrap();
            prop_assert!(n <= h + 1e-12);
            prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn overall_hit_is_weighted_item_average(ranks in prop::collection::vec((1usize..40, 0u32..6), 1..40), k in 1usize..20) {
            let results: Vec<_> = ranks.iter().enumerate().map(|(i, &(rank, t))| r(i as u32 % 6, t, rank)).collect();
            let rep = segmented_report(&results, &seg6(), &[k], Phase::Test).unwrap();
            let part = |s| rep.segments.get(&s).map(|m| m.hit_ratio[&k] * m.count as f64).unwrap_or(0.0);
            let overall = rep.hit(Segment::Overall, k).unwrap();
            prop_assert!((overall - (part(Segment::HeadItem) + part(Segment::TailItem)) / results.len() as f64).abs() < 1e-12);
        }
    }
}
