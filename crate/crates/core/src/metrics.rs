//! Utility and individual-fairness metrics.
//!
//! Utility: ROC AUC (rank statistic with ties counted half) and average
//! precision over the score-sorted sweep. Fairness: the absolute prediction
//! gap over comparable pairs sharing a positive/negative label, reported as
//! mean and upper quartile on a x100 scale, with per-sensitive-relation
//! breakdowns. Quartiles use linear interpolation between closest ranks.

use crate::comparability::{ComparablePair, SensitiveRelation};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Probability a random positive outranks a random negative; ties count 1/2.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both classes present".into(),
        ));
    }
    // Rank-sum formulation with midranks for ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let pos = pos as f64;
    let neg = neg as f64;
    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Average precision: sum of (recall step) x (precision) over the sweep of
/// distinct score thresholds, descending.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            seen += 1;
            if labels[idx] == 1 {
                tp += 1;
            }
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Accuracy, balanced accuracy, and F1 at the 0.5 threshold, on a x100 scale.
pub fn classification_stats(scores: &[f64], labels: &[u8]) -> (f64, f64, f64) {
    assert_eq!(scores.len(), labels.len());
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let n = scores.len() as f64;
    let acc = (tp + tn) as f64 / n;
    let tpr = if tp + fne > 0 { tp as f64 / (tp + fne) as f64 } else { 0.0 };
    let tnr = if tn + fp > 0 { tn as f64 / (tn + fp) as f64 } else { 0.0 };
    let bal = (tpr + tnr) / 2.0;
    let f1 = if 2 * tp + fp + fne > 0 {
        2.0 * tp as f64 / (2 * tp + fp + fne) as f64
    } else {
        0.0
    };
    (acc * 100.0, bal * 100.0, f1 * 100.0)
}

/// Linear-interpolation percentile (the `linear` method): rank
/// `q * (n - 1)` interpolated between the closest order statistics.
pub fn percentile_linear(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Mean and upper quartile of a gap sample, x100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean: f64,
    pub q3: f64,
    pub count: usize,
}

impl GapStats {
    fn from_gaps(gaps: &[f64]) -> Option<Self> {
        if gaps.is_empty() {
            return None;
        }
        Some(Self {
            mean: gaps.iter().sum::<f64>() / gaps.len() as f64,
            q3: percentile_linear(gaps, 0.75),
            count: gaps.len(),
        })
    }
}

/// Fairness side of a report: per label class, overall and per sensitive
/// relation. Absent entries mean the pair class was empty, not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CompGapReport {
    pub pos: Option<GapStats>,
    pub neg: Option<GapStats>,
    pub pos_by_relation: Vec<(String, GapStats)>,
    pub neg_by_relation: Vec<(String, GapStats)>,
}

/// Prediction gaps `|f(x_i) - f(x_j)| * 100` over comparable pairs.
///
/// `scores` are the model's probabilistic outputs for every row of the split
/// the pairs were mined on.
pub fn comp_gap_stats(scores: &[f64], pairs: &[ComparablePair]) -> CompGapReport {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut by_rel: std::collections::HashMap<(u8, SensitiveRelation), Vec<f64>> =
        std::collections::HashMap::new();
    for p in pairs {
        let gap = (scores[p.i as usize] - scores[p.j as usize]).abs() * 100.0;
        if p.label == 1 {
            pos.push(gap);
        } else {
            neg.push(gap);
        }
        by_rel.entry((p.label, p.relation)).or_default().push(gap);
    }
    let collect = |label: u8| -> Vec<(String, GapStats)> {
        let mut out = Vec::new();
        for rel in [
            SensitiveRelation::AllDiffer,
            SensitiveRelation::SomeDiffer,
            SensitiveRelation::NoneDiffer,
        ] {
            if let Some(stats) = by_rel.get(&(label, rel)).and_then(|g| GapStats::from_gaps(g)) {
                out.push((rel.as_str().to_string(), stats));
            }
        }
        out
    };
    CompGapReport {
        pos: GapStats::from_gaps(&pos),
        neg: GapStats::from_gaps(&neg),
        pos_by_relation: collect(1),
        neg_by_relation: collect(0),
    }
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Full evaluation of one trained regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub version: u32,
    pub regime: String,
    pub classifier: String,
    pub seeds: usize,
    pub antidote_percent: f64,
    /// x100 scale.
    pub roc: f64,
    /// x100 scale.
    pub ap: f64,
    pub comp: CompGapReport,
}

impl FairnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report parse: {e}")))
    }

    /// Flat CSV row for tabulation; `write_csv_header` gives the column order.
    pub fn write_csv_row<W: Write>(&self, mut w: W) -> Result<()> {
        let fmt = |g: &Option<GapStats>, pick: fn(&GapStats) -> f64| -> String {
            g.as_ref().map(|s| format!("{:.4}", pick(s))).unwrap_or_default()
        };
        writeln!(
            w,
            "{},{},{},{:.2},{:.4},{:.4},{},{},{},{}",
            self.regime,
            self.classifier,
            self.seeds,
            self.antidote_percent,
            self.roc,
            self.ap,
            fmt(&self.comp.pos, |s| s.mean),
            fmt(&self.comp.pos, |s| s.q3),
            fmt(&self.comp.neg, |s| s.mean),
            fmt(&self.comp.neg, |s| s.q3),
        )?;
        Ok(())
    }

    pub fn write_csv_header<W: Write>(mut w: W) -> Result<()> {
        writeln!(
            w,
            "regime,classifier,seeds,antidote_percent,roc,ap,pos_mean,pos_q3,neg_mean,neg_q3"
        )?;
        Ok(())
    }
}

/// Arithmetic mean of each metric across per-seed reports.
pub fn average_reports(reports: &[FairnessReport]) -> FairnessReport {
    assert!(!reports.is_empty());
    let n = reports.len() as f64;
    let mut out = reports[0].clone();
    out.seeds = reports.len();
    out.roc = reports.iter().map(|r| r.roc).sum::<f64>() / n;
    out.ap = reports.iter().map(|r| r.ap).sum::<f64>() / n;
    let avg_gap = |pick: &dyn Fn(&FairnessReport) -> Option<GapStats>| -> Option<GapStats> {
        let all: Vec<GapStats> = reports.iter().filter_map(pick).collect();
        if all.len() != reports.len() {
            return None;
        }
        Some(GapStats {
            mean: all.iter().map(|g| g.mean).sum::<f64>() / n,
            q3: all.iter().map(|g| g.q3).sum::<f64>() / n,
            count: all[0].count,
        })
    };
    out.comp.pos = avg_gap(&|r| r.comp.pos);
    out.comp.neg = avg_gap(&|r| r.comp.neg);
    let avg_rel = |pick: &dyn Fn(&FairnessReport) -> &Vec<(String, GapStats)>| {
        let names: Vec<String> = pick(&reports[0]).iter().map(|(n, _)| n.clone()).collect();
        names
            .into_iter()
            .filter_map(|name| {
                let stats: Vec<&GapStats> = reports
                    .iter()
                    .filter_map(|r| {
                        pick(r).iter().find(|(n, _)| *n == name).map(|(_, s)| s)
                    })
                    .collect();
                if stats.len() != reports.len() {
                    return None;
                }
                Some((
                    name,
                    GapStats {
                        mean: stats.iter().map(|g| g.mean).sum::<f64>() / n,
                        q3: stats.iter().map(|g| g.q3).sum::<f64>() / n,
                        count: stats[0].count,
                    },
                ))
            })
            .collect::<Vec<_>>()
    };
    out.comp.pos_by_relation = avg_rel(&|r| &r.comp.pos_by_relation);
    out.comp.neg_by_relation = avg_rel(&|r| &r.comp.neg_by_relation);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Quadratic-time AUC over all positive-negative pairs.
    fn auc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn half_right_ranking_scores_half() {
        // Positive-negative pairs: (0.9 > 0.8) correct, (0.3 < 0.8) wrong.
        let auc = roc_auc(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn all_ties_score_half() {
        let auc = roc_auc(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(average_precision(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn average_precision_hand_cases() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.2], &[1, 1, 0]).unwrap(), 1.0);
        // Positive ranked second: precision 1/2 at recall 1.
        assert_eq!(average_precision(&[0.2, 0.9], &[1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn average_precision_is_rank_invariant() {
        let scores = [0.1, 0.7, 0.3, 0.9, 0.5];
        let labels = [0, 1, 0, 1, 1];
        let base = average_precision(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (10.0 * s).tanh()).collect();
        let other = average_precision(&squashed, &labels).unwrap();
        assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn percentile_linear_interpolates() {
        assert_eq!(percentile_linear(&[0.0, 10.0, 20.0, 30.0], 0.75), 22.5);
        assert_eq!(percentile_linear(&[5.0], 0.75), 5.0);
        assert_eq!(percentile_linear(&[1.0, 2.0], 0.5), 1.5);
    }

    fn pair(i: u32, j: u32, label: u8) -> ComparablePair {
        ComparablePair { i, j, label, relation: SensitiveRelation::AllDiffer }
    }

    #[test]
    fn constant_model_has_zero_gaps() {
        let scores = vec![0.3; 6];
        let pairs = vec![pair(0, 1, 1), pair(2, 3, 0)];
        let rep = comp_gap_stats(&scores, &pairs);
        assert_eq!(rep.pos.unwrap().mean, 0.0);
        assert_eq!(rep.neg.unwrap().q3, 0.0);
    }

    #[test]
    fn gap_stats_hand_case() {
        // Gaps x100: {0, 10, 20, 30} -> mean 15, Q3 22.5.
        let scores = vec![0.5, 0.5, 0.6, 0.5, 0.7, 0.5, 0.8, 0.5];
        let pairs = vec![pair(0, 1, 1), pair(2, 3, 1), pair(4, 5, 1), pair(6, 7, 1)];
        let rep = comp_gap_stats(&scores, &pairs);
        let pos = rep.pos.unwrap();
        assert!((pos.mean - 15.0).abs() < 1e-9);
        assert!((pos.q3 - 22.5).abs() < 1e-9);
        assert!(rep.neg.is_none());
    }

    #[test]
    fn gap_stats_orientation_and_order_invariant() {
        let scores = vec![0.1, 0.9, 0.4, 0.45];
        let a = comp_gap_stats(&scores, &[pair(0, 1, 1), pair(2, 3, 1)]);
        let b = comp_gap_stats(&scores, &[pair(2, 3, 1), pair(1, 0, 1)]);
        assert_eq!(a.pos, b.pos);
    }

    #[test]
    fn classification_stats_cases() {
        let (acc, bal, f1) = classification_stats(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]);
        assert_eq!((acc, bal, f1), (100.0, 100.0, 100.0));
        // All-positive predictions on balanced labels: balanced accuracy 50.
        let (_, bal, _) = classification_stats(&[0.9, 0.9, 0.9, 0.9], &[1, 1, 0, 0]);
        assert_eq!(bal, 50.0);
    }

    #[test]
    fn report_json_roundtrip_and_csv_shape() {
        let rep = FairnessReport {
            version: REPORT_FORMAT_VERSION,
            regime: "base".into(),
            classifier: "logreg".into(),
            seeds: 1,
            antidote_percent: 0.0,
            roc: 90.0,
            ap: 75.0,
            comp: comp_gap_stats(&[0.2, 0.4], &[pair(0, 1, 1)]),
        };
        let back = FairnessReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(rep, back);
        let mut csv = Vec::new();
        FairnessReport::write_csv_header(&mut csv).unwrap();
        rep.write_csv_row(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(),
                   text.lines().nth(1).unwrap().split(',').count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn auc_matches_brute_force(
            scores in prop::collection::vec(0.0f64..1.0, 2..60),
            flips in prop::collection::vec(prop::bool::ANY, 2..60),
        ) {
            let n = scores.len().min(flips.len());
            let scores = &scores[..n];
            // Round scores to force ties sometimes.
            let scores: Vec<f64> = scores.iter().map(|s| (s * 8.0).round() / 8.0).collect();
            let labels: Vec<u8> = flips[..n].iter().map(|&b| u8::from(b)).collect();
            prop_assume!(labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0));
            let fast = roc_auc(&scores, &labels).unwrap();
            let brute = auc_brute(&scores, &labels);
            prop_assert!((fast - brute).abs() < 1e-12);
        }

        #[test]
        fn percentile_matches_reference_oracle(
            values in prop::collection::vec(-50.0f64..50.0, 1..40),
            q in 0.0f64..=1.0,
        ) {
            // Reference: exhaustive definition of the linear method.
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = q * (sorted.len() - 1) as f64;
            let expected = if sorted.len() == 1 {
                sorted[0]
            } else {
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(sorted.len() - 1);
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            };
            let got = percentile_linear(&values, q);
            prop_assert!((got - expected).abs() < 1e-9);
        }
    }
}
