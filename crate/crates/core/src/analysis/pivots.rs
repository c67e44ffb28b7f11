use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::WordScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PivotCategory {
    /// High attention under both models.
    Pivot,
    /// High under the naive model, low under the adversarial one.
    SourceNonPivot,
    /// Low under the naive model, high under the adversarial one.
    TargetNonPivot,
}

impl PivotCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            PivotCategory::Pivot => "pivot",
            PivotCategory::SourceNonPivot => "source_nonpivot",
            PivotCategory::TargetNonPivot => "target_nonpivot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotEntry {
    pub word: String,
    pub category: PivotCategory,
    pub han_rank: f64,
    pub hagan_rank: f64,
}

/// Three disjoint ranked lists, most confident first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PivotReport {
    pub pivots: Vec<PivotEntry>,
    pub source_nonpivots: Vec<PivotEntry>,
    pub target_nonpivots: Vec<PivotEntry>,
}

impl PivotReport {
    pub fn words(&self, category: PivotCategory) -> Vec<&str> {
        let list = match category {
            PivotCategory::Pivot => &self.pivots,
            PivotCategory::SourceNonPivot => &self.source_nonpivots,
            PivotCategory::TargetNonPivot => &self.target_nonpivots,
        };
        list.iter().map(|e| e.word.as_str()).collect()
    }

    /// TSV `word<TAB>category<TAB>han_rank<TAB>hagan_rank`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in self.pivots.iter().chain(&self.source_nonpivots).chain(&self.target_nonpivots) {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.word,
                e.category.as_str(),
                e.han_rank,
                e.hagan_rank
            );
        }
        out
    }
}

/// Mid-rank quantile of each score in `[0, 1]`: the fraction of other
/// entries below it, counting ties as half. A lone entry ranks 1.
pub fn quantile_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    scores
        .iter()
        .map(|s| {
            let below = sorted.partition_point(|x| x.total_cmp(s).is_lt());
            let upto = sorted.partition_point(|x| x.total_cmp(s).is_le());
            let ties = upto - below - 1;
            (below as f64 + 0.5 * ties as f64) / (n - 1) as f64
        })
        .collect()
}

fn ranks_of(table: &WordScoreTable) -> Vec<(&str, f64)> {
    let scores: Vec<f64> = table.entries.iter().map(|e| e.score).collect();
    table
        .entries
        .iter()
        .map(|e| e.word.as_str())
        .zip(quantile_ranks(&scores))
        .collect()
}

/// Pivot and non-pivot lists from two score tables. A rank at or above
/// `high` is high, at or below `low` is low; a word missing from one table
/// ranks 0 there.
pub fn classify_pivots(
    han: &WordScoreTable,
    hagan: &WordScoreTable,
    high: f64,
    low: f64,
) -> Result<PivotReport> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::Usage(format!(
            "thresholds need 0 < low < high < 1, got low {low} and high {high}"
        )));
    }
    let han_ranks = ranks_of(han);
    let hagan_ranks = ranks_of(hagan);
    let rank = |ranks: &[(&str, f64)], w: &str| {
        ranks
            .binary_search_by(|(x, _)| (*x).cmp(w))
            .map_or(0.0, |i| ranks[i].1)
    };
    let words: BTreeSet<&str> = han_ranks.iter().chain(&hagan_ranks).map(|(w, _)| *w).collect();
    let mut report = PivotReport::default();
    for w in words {
        let (a, b) = (rank(&han_ranks, w), rank(&hagan_ranks, w));
        let (category, list) = if a >= high && b >= high {
            (PivotCategory::Pivot, &mut report.pivots)
        } else if a >= high && b <= low {
            (PivotCategory::SourceNonPivot, &mut report.source_nonpivots)
        } else if a <= low && b >= high {
            (PivotCategory::TargetNonPivot, &mut report.target_nonpivots)
        } else {
            continue;
        };
        list.push(PivotEntry {
            word: w.to_string(),
            category,
            han_rank: a,
            hagan_rank: b,
        });
    }
    let by = |key: fn(&PivotEntry) -> f64| {
        move |x: &PivotEntry, y: &PivotEntry| key(y).total_cmp(&key(x)).then_with(|| x.word.cmp(&y.word))
    };
    report.pivots.sort_by(by(|e| e.han_rank + e.hagan_rank));
    report.source_nonpivots.sort_by(by(|e| e.han_rank - e.hagan_rank));
    report.target_nonpivots.sort_by(by(|e| e.hagan_rank - e.han_rank));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::WordScore;
    use proptest::prelude::*;

    fn table(pairs: &[(&str, f64)]) -> WordScoreTable {
        let mut entries: Vec<WordScore> = pairs
            .iter()
            .map(|(w, s)| WordScore {
                word: w.to_string(),
                score: *s,
                count: 1,
            })
            .collect();
        entries.sort_by(|a, b| a.word.cmp(&b.word));
        WordScoreTable { entries }
    }

    #[test]
    fn quantile_ranks_span_unit_interval_with_mid_rank_ties() {
        assert_eq!(quantile_ranks(&[0.3, 0.1, 0.2]), vec![1.0, 0.0, 0.5]);
        assert_eq!(quantile_ranks(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(quantile_ranks(&[0.7]), vec![1.0]);
        assert_eq!(quantile_ranks(&[0.1, 0.2, 0.2, 0.9]), vec![0.0, 0.5, 0.5, 1.0]);
    }

    /// Eleven words w0..w10 ranked 0, 0.1, ..., 1 by score in one table.
    fn graded(order: &[&str]) -> WordScoreTable {
        let pairs: Vec<(&str, f64)> = order
            .iter()
            .enumerate()
            .map(|(i, w)| (*w, i as f64 / 100.0))
            .collect();
        table(&pairs)
    }

    #[test]
    fn the_three_rules() {
        // "good" near the top of both; "readable" 0.9 vs 0.1; "pixelated" 0.1 vs 0.9.
        let han = graded(&["f0", "pixelated", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "readable", "good"]);
        let hagan = graded(&["f0", "readable", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "pixelated", "good"]);
        // f8 sits at 0.8 in both tables, so the high cut is set above it.
        let r = classify_pivots(&han, &hagan, 0.85, 0.5).unwrap();
        assert_eq!(r.words(PivotCategory::Pivot), vec!["good"]);
        assert_eq!(r.words(PivotCategory::SourceNonPivot), vec!["readable"]);
        assert_eq!(r.words(PivotCategory::TargetNonPivot), vec!["pixelated"]);
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("good\tpivot\t1\t1\n"));
        assert!(tsv.contains("readable\tsource_nonpivot\t0.9\t0.1\n"));
    }

    #[test]
    fn absent_words_rank_zero() {
        let han = table(&[("a", 0.1), ("b", 0.9)]);
        let hagan = table(&[("a", 0.1), ("c", 0.9)]);
        let r = classify_pivots(&han, &hagan, 0.8, 0.5).unwrap();
        assert_eq!(r.words(PivotCategory::SourceNonPivot), vec!["b"]);
        assert_eq!(r.words(PivotCategory::TargetNonPivot), vec!["c"]);
        assert!(r.pivots.is_empty());
    }

    #[test]
    fn bad_thresholds_are_rejected() {
        let t = table(&[("a", 0.1)]);
        for (high, low) in [(0.5, 0.5), (0.4, 0.6), (1.0, 0.5), (0.8, 0.0)] {
            assert!(matches!(classify_pivots(&t, &t, high, low), Err(Error::Usage(_))));
        }
    }

    fn scores() -> impl Strategy<Value = Vec<(String, f64)>> {
        proptest::collection::btree_map("[a-h]{1,2}", 0u32..1000, 1..30)
            .prop_map(|m| m.into_iter().map(|(w, k)| (w, f64::from(k) / 1000.0)).collect())
    }

    fn owned(pairs: &[(String, f64)]) -> WordScoreTable {
        let refs: Vec<(&str, f64)> = pairs.iter().map(|(w, s)| (w.as_str(), *s)).collect();
        table(&refs)
    }

    proptest! {
        #[test]
        fn lists_are_disjoint(han in scores(), hagan in scores(), low in 0.01f64..0.98, gap in 0.001f64..1.0) {
            let high = low + gap * (0.999 - low);
            prop_assume!(high > low);
            let r = classify_pivots(&owned(&han), &owned(&hagan), high, low).unwrap();
            let mut seen = BTreeSet::new();
            for e in r.pivots.iter().chain(&r.source_nonpivots).chain(&r.target_nonpivots) {
                prop_assert!(seen.insert(e.word.clone()));
            }
        }

        #[test]
        fn invariant_under_monotone_rescaling(han in scores(), hagan in scores()) {
            let base = classify_pivots(&owned(&han), &owned(&hagan), 0.8, 0.5).unwrap();
            let squash = |pairs: &[(String, f64)], f: fn(f64) -> f64| -> Vec<(String, f64)> {
                pairs.iter().map(|(w, s)| (w.clone(), f(*s))).collect()
            };
            let moved = classify_pivots(
                &owned(&squash(&han, |s| s * s * s)),
                &owned(&squash(&hagan, |s| s.exp() / 3.0)),
                0.8,
                0.5,
            )
            .unwrap();
            prop_assert_eq!(base, moved);
        }
    }
}
