//! Record-level scoring against gold annotations: confusion tallies,
//! precision/recall points, and modified-Wald (Agresti-Coull) 95%
//! confidence intervals.
//!
//! The interval is centred on p~ = (x + z²/2)/(n + z²) with half-width
//! z·sqrt(p~(1-p~)/(n + z²)) and clipped to [0, 1]. The z constant is the
//! precise two-sided 95% quantile, not 1.96.
//!
//! Reporting conventions: point estimates are exact ratios rendered at one
//! decimal percent; interval bounds at two decimal percent; both rounded
//! half away from zero.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::GoldLabel;
use crate::outcome::{BackendKind, ExtractionOutcome, OutcomeStatus};

/// Two-sided 95% normal quantile at the precision required to reproduce
/// published interval bounds.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("invalid counts: {successes} successes out of {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("duplicate gold label for narrative {0:?}")]
    DuplicateGold(String),
    #[error("duplicate outcome for narrative {0:?} from backend {1:?}")]
    DuplicateOutcome(String, String),
    #[error("outcome for narrative {0:?} has no gold label")]
    MissingGold(String),
}

/// A clipped binomial confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: String,
}

/// Modified-Wald interval for `successes` out of `trials`.
pub fn agresti_coull_ci(successes: u64, trials: u64) -> Result<ConfidenceInterval, EvalError> {
    if trials == 0 || successes > trials {
        return Err(EvalError::InvalidCounts { successes, trials });
    }
    let z2 = Z_95 * Z_95;
    let adjusted_n = trials as f64 + z2;
    let center = (successes as f64 + z2 / 2.0) / adjusted_n;
    let half_width = Z_95 * (center * (1.0 - center) / adjusted_n).sqrt();
    Ok(ConfidenceInterval {
        lower: (center - half_width).max(0.0),
        upper: (center + half_width).min(1.0),
        level: 0.95,
        method: "modified-wald".to_string(),
    })
}

/// Render a fraction as a percentage with the given decimals, rounded half
/// away from zero.
pub fn format_pct(fraction: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let rounded = (fraction * 100.0 * scale).round() / scale;
    format!("{rounded:.decimals$}")
}

/// Overweight assertions without a matching overweight observation, split
/// by whether the vet described the animal as overweight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtraOverweightTally {
    pub vet_corroborated: u64,
    pub uncorroborated: u64,
}

impl ExtraOverweightTally {
    pub fn total(&self) -> u64 {
        self.vet_corroborated + self.uncorroborated
    }
}

/// Record-level confusion counts for one backend. The target is "narrative
/// contains an overweight BCS".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTally {
    #[serde(rename = "tp")]
    pub true_positives: u64,
    #[serde(rename = "fp")]
    pub false_positives: u64,
    #[serde(rename = "fn")]
    pub false_negatives: u64,
    pub no_answer_count: u64,
    pub extra_overweight_no_bcs: ExtraOverweightTally,
}

impl ConfusionTally {
    pub fn gold_positives(&self) -> u64 {
        self.true_positives + self.false_negatives
    }

    pub fn predicted_positives(&self) -> u64 {
        self.true_positives + self.false_positives
    }

    /// Exact precision ratio; absent when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        match self.predicted_positives() {
            0 => None,
            n => Some(self.true_positives as f64 / n as f64),
        }
    }

    /// Exact recall ratio; absent when the gold set has no positives.
    pub fn recall(&self) -> Option<f64> {
        match self.gold_positives() {
            0 => None,
            n => Some(self.true_positives as f64 / n as f64),
        }
    }
}

/// Score the outcomes of one backend (selected by label) against gold.
///
/// Predicted-positive means the outcome carries a plausible observation
/// classifying overweight. No-answers count as predicted-negative. For LLM
/// backends, overweight assertions on records without a recorded overweight
/// BCS are tallied separately, split by the vet's own description.
pub fn score_backend(
    outcomes: &[ExtractionOutcome],
    gold: &[GoldLabel],
    backend_label: &str,
) -> Result<ConfusionTally, EvalError> {
    let mut gold_by_id: HashMap<&str, &GoldLabel> = HashMap::with_capacity(gold.len());
    for label in gold {
        if gold_by_id.insert(label.narrative_id.as_str(), label).is_some() {
            return Err(EvalError::DuplicateGold(label.narrative_id.clone()));
        }
    }

    let mut tally = ConfusionTally::default();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for outcome in outcomes.iter().filter(|o| o.backend_label == backend_label) {
        if seen.insert(outcome.narrative_id.as_str(), ()).is_some() {
            return Err(EvalError::DuplicateOutcome(
                outcome.narrative_id.clone(),
                backend_label.to_string(),
            ));
        }
        let gold_label = gold_by_id
            .get(outcome.narrative_id.as_str())
            .ok_or_else(|| EvalError::MissingGold(outcome.narrative_id.clone()))?;
        let predicted = outcome.predicted_overweight_bcs();
        match (predicted, gold_label.has_overweight_bcs) {
            (true, true) => tally.true_positives += 1,
            (true, false) => tally.false_positives += 1,
            _ => {}
        }
        if outcome.status == OutcomeStatus::NoAnswer {
            tally.no_answer_count += 1;
        }
        if outcome.backend_kind == BackendKind::Llm
            && outcome.overweight_asserted
            && !predicted
            && !gold_label.has_overweight_bcs
        {
            if gold_label.vet_described_overweight {
                tally.extra_overweight_no_bcs.vet_corroborated += 1;
            } else {
                tally.extra_overweight_no_bcs.uncorroborated += 1;
            }
        }
    }

    let gold_positive_count = gold.iter().filter(|g| g.has_overweight_bcs).count() as u64;
    tally.false_negatives = gold_positive_count - tally.true_positives;
    Ok(tally)
}

/// A point estimate with its interval, carrying both the exact values and
/// the report-convention renderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub value: f64,
    pub pct: String,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub ci_lower_pct: String,
    pub ci_upper_pct: String,
}

impl MetricPoint {
    pub fn from_counts(successes: u64, trials: u64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        let ci = agresti_coull_ci(successes, trials).expect("trials > 0 and x <= n");
        let value = successes as f64 / trials as f64;
        Some(MetricPoint {
            value,
            pct: format_pct(value, 1),
            ci_lower: ci.lower,
            ci_upper: ci.upper,
            ci_lower_pct: format_pct(ci.lower, 2),
            ci_upper_pct: format_pct(ci.upper, 2),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub backend: String,
    pub tally: ConfusionTally,
    pub precision: Option<MetricPoint>,
    pub recall: Option<MetricPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub record_count: u64,
    pub gold_positive_count: u64,
    pub prevalence: Option<f64>,
    pub prevalence_pct: Option<String>,
}

impl CorpusStats {
    pub fn new(record_count: u64, gold_positive_count: u64) -> Self {
        let prevalence = match record_count {
            0 => None,
            n => Some(gold_positive_count as f64 / n as f64),
        };
        CorpusStats {
            record_count,
            gold_positive_count,
            prevalence,
            prevalence_pct: prevalence.map(|p| format_pct(p, 2)),
        }
    }
}

/// The full evaluation product: corpus stats plus per-backend metrics,
/// ordered by backend label for deterministic serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus: CorpusStats,
    pub backends: Vec<BackendReport>,
}

/// Assemble the report from per-backend tallies.
pub fn build_report(tallies: Vec<(String, ConfusionTally)>, corpus: CorpusStats) -> MetricReport {
    let mut backends: Vec<BackendReport> = tallies
        .into_iter()
        .map(|(backend, tally)| BackendReport {
            backend,
            precision: MetricPoint::from_counts(tally.true_positives, tally.predicted_positives()),
            recall: MetricPoint::from_counts(tally.true_positives, tally.gold_positives()),
            tally,
        })
        .collect();
    backends.sort_by(|a, b| a.backend.cmp(&b.backend));
    MetricReport { corpus, backends }
}

/// Score every backend label present in `outcomes` and build the report.
pub fn score_all(
    outcomes: &[ExtractionOutcome],
    gold: &[GoldLabel],
) -> Result<MetricReport, EvalError> {
    let labels: BTreeSet<&str> = outcomes.iter().map(|o| o.backend_label.as_str()).collect();
    let mut tallies = Vec::new();
    for label in labels {
        tallies.push((label.to_string(), score_backend(outcomes, gold, label)?));
    }
    let gold_positive_count = gold.iter().filter(|g| g.has_overweight_bcs).count() as u64;
    Ok(build_report(
        tallies,
        CorpusStats::new(gold.len() as u64, gold_positive_count),
    ))
}

impl MetricReport {
    /// Canonical JSON rendering with fixed key order.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// Flat CSV: one summary row per backend.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "backend,records,gold_positives,tp,fp,fn,no_answer,extra_ow_vet_corroborated,extra_ow_uncorroborated,precision_pct,precision_ci_lower_pct,precision_ci_upper_pct,recall_pct,recall_ci_lower_pct,recall_ci_upper_pct\n",
        );
        for report in &self.backends {
            let t = &report.tally;
            let metric = |m: &Option<MetricPoint>, which: usize| -> String {
                match m {
                    None => String::new(),
                    Some(p) => match which {
                        0 => p.pct.clone(),
                        1 => p.ci_lower_pct.clone(),
                        _ => p.ci_upper_pct.clone(),
                    },
                }
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                report.backend,
                self.corpus.record_count,
                self.corpus.gold_positive_count,
                t.true_positives,
                t.false_positives,
                t.false_negatives,
                t.no_answer_count,
                t.extra_overweight_no_bcs.vet_corroborated,
                t.extra_overweight_no_bcs.uncorroborated,
                metric(&report.precision, 0),
                metric(&report.precision, 1),
                metric(&report.precision, 2),
                metric(&report.recall, 0),
                metric(&report.recall, 1),
                metric(&report.recall, 2),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BcsObservation, BcsScale, Score};

    fn gold(id: &str, has: bool, vet: bool) -> GoldLabel {
        GoldLabel {
            narrative_id: id.into(),
            has_overweight_bcs: has,
            vet_described_overweight: vet,
            reference_score: None,
        }
    }

    fn obs(value: &str, scale: BcsScale) -> BcsObservation {
        BcsObservation::new(value.parse().unwrap(), None, scale, None).unwrap()
    }

    #[test]
    fn published_intervals_reproduce_at_two_decimals() {
        let cases = [
            (117u64, 117u64, "96.18", "100.00"),
            (85, 117, "63.92", "79.94"),
            (117, 131, "82.75", "93.64"),
            (85, 85, "94.81", "100.00"),
        ];
        for (x, n, lower, upper) in cases {
            let ci = agresti_coull_ci(x, n).unwrap();
            assert_eq!(format_pct(ci.lower, 2), lower, "lower of ({x},{n})");
            assert_eq!(format_pct(ci.upper, 2), upper, "upper of ({x},{n})");
        }
    }

    #[test]
    fn zero_successes_clip_to_zero() {
        let ci = agresti_coull_ci(0, 10).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.upper > 0.0);
    }

    #[test]
    fn invalid_counts_error() {
        assert!(agresti_coull_ci(1, 0).is_err());
        assert!(agresti_coull_ci(5, 4).is_err());
    }

    #[test]
    fn interval_is_symmetric_before_clipping_and_contains_center() {
        let z2 = Z_95 * Z_95;
        for (x, n) in [(3u64, 10u64), (50, 100), (117, 131)] {
            let ci = agresti_coull_ci(x, n).unwrap();
            let center = (x as f64 + z2 / 2.0) / (n as f64 + z2);
            assert!((center - ci.lower - (ci.upper - center)).abs() < 1e-12);
            assert!(ci.lower <= center && center <= ci.upper);
        }
    }

    #[test]
    fn half_successes_interval_contains_half() {
        let ci = agresti_coull_ci(50, 100).unwrap();
        assert!(ci.lower < 0.5 && 0.5 < ci.upper);
    }

    #[test]
    fn point_estimates_round_per_convention() {
        assert_eq!(format_pct(117.0 / 131.0, 1), "89.3");
        assert_eq!(format_pct(85.0 / 117.0, 1), "72.6");
        assert_eq!(format_pct(117.0 / 4415.0, 2), "2.65");
        assert_eq!(format_pct(1.0, 1), "100.0");
    }

    #[test]
    fn scoring_counts_confusion_cells() {
        let gold_set = vec![gold("n1", true, false), gold("n2", false, false), gold("n3", true, false)];
        let outcomes = vec![
            ExtractionOutcome::llm_ok("n1", "llm-replay", vec![obs("7", BcsScale::NinePoint)], true, None, "BCS 7/9"),
            ExtractionOutcome::llm_ok("n2", "llm-replay", vec![obs("6", BcsScale::NinePoint)], true, None, "BCS 6/9"),
            ExtractionOutcome::llm_no_answer("n3", "llm-replay", "Hello!"),
        ];
        let tally = score_backend(&outcomes, &gold_set, "llm-replay").unwrap();
        assert_eq!(tally.true_positives, 1);
        assert_eq!(tally.false_positives, 1);
        assert_eq!(tally.false_negatives, 1);
        assert_eq!(tally.no_answer_count, 1);
        assert_eq!(tally.gold_positives(), 2);
    }

    #[test]
    fn assertions_without_bcs_are_tallied_separately() {
        let gold_set = vec![gold("n1", false, true), gold("n2", false, false)];
        let outcomes = vec![
            ExtractionOutcome::llm_ok("n1", "llm-replay", vec![], true, None, "No BCS recorded. BCS overweight."),
            ExtractionOutcome::llm_ok("n2", "llm-replay", vec![obs("5.75", BcsScale::NinePoint)], true, None, "BCS 5.75/9. BCS overweight."),
        ];
        let tally = score_backend(&outcomes, &gold_set, "llm-replay").unwrap();
        assert_eq!(tally.true_positives, 0);
        assert_eq!(tally.false_positives, 0);
        assert_eq!(tally.extra_overweight_no_bcs.vet_corroborated, 1);
        assert_eq!(tally.extra_overweight_no_bcs.uncorroborated, 1);
    }

    #[test]
    fn duplicate_and_missing_labels_are_data_errors() {
        let outcomes = vec![
            ExtractionOutcome::llm_ok("n1", "llm-replay", vec![], false, None, ""),
            ExtractionOutcome::llm_ok("n1", "llm-replay", vec![], false, None, ""),
        ];
        assert_eq!(
            score_backend(&outcomes, &[gold("n1", false, false)], "llm-replay").unwrap_err(),
            EvalError::DuplicateOutcome("n1".into(), "llm-replay".into())
        );
        let outcomes = vec![ExtractionOutcome::llm_ok("nX", "llm-replay", vec![], false, None, "")];
        assert_eq!(
            score_backend(&outcomes, &[gold("n1", false, false)], "llm-replay").unwrap_err(),
            EvalError::MissingGold("nX".into())
        );
        assert_eq!(
            score_backend(&[], &[gold("n1", false, false), gold("n1", false, false)], "x").unwrap_err(),
            EvalError::DuplicateGold("n1".into())
        );
    }

    #[test]
    fn empty_inputs_produce_a_zero_tally_and_absent_metrics() {
        let tally = score_backend(&[], &[], "rule-extended").unwrap();
        assert_eq!(tally, ConfusionTally::default());
        assert_eq!(tally.precision(), None);
        assert_eq!(tally.recall(), None);
        let report = build_report(vec![("rule-extended".into(), tally)], CorpusStats::new(0, 0));
        assert!(report.backends[0].precision.is_none());
        assert!(report.backends[0].recall.is_none());
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let tally = ConfusionTally {
            true_positives: 117,
            false_positives: 14,
            false_negatives: 0,
            no_answer_count: 29,
            extra_overweight_no_bcs: ExtraOverweightTally {
                vet_corroborated: 40,
                uncorroborated: 21,
            },
        };
        let report = build_report(
            vec![("llm-replay".into(), tally)],
            CorpusStats::new(4415, 117),
        );
        assert_eq!(report.to_json(), report.to_json());
        assert_eq!(report.corpus.prevalence_pct.as_deref(), Some("2.65"));
        let csv = report.to_csv();
        assert!(csv.contains("llm-replay,4415,117,117,14,0,29,40,21,89.3,82.75,93.64,100.0,96.18,100.00"));
    }
}
