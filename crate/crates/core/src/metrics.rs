//! Confusion-matrix arithmetic and ranking metrics for the binary
//! cardiomegaly task.
//!
//! `Present` is the positive class everywhere; every scalar metric is
//! referenced to it. Zero denominators surface as `None` ("undefined")
//! rather than errors so per-epoch curve emission never aborts.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("label sequences differ in length: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("empty input")]
    Empty,
    #[error("ROC AUC needs at least one positive and one negative label")]
    SingleClass,
    #[error("scores and labels differ in length: {scores} vs {truths}")]
    ScoreLengthMismatch { scores: usize, truths: usize },
    #[error("unknown label {0:?}; expected Present or NotPresent")]
    UnknownLabel(String),
}

/// Binary class label; `Present` (cardiomegaly) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Present,
    NotPresent,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Present)
    }

    /// Index of the label's logit/probability column: NotPresent = 0,
    /// Present = 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::NotPresent => 0,
            Label::Present => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Self {
        if index == 1 {
            Label::Present
        } else {
            Label::NotPresent
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Present => "Present",
            Label::NotPresent => "NotPresent",
        })
    }
}

impl FromStr for Label {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, MetricsError> {
        match s {
            "Present" => Ok(Label::Present),
            "NotPresent" => Ok(Label::NotPresent),
            other => Err(MetricsError::UnknownLabel(other.to_string())),
        }
    }
}

/// Contingency counts with `Present` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub true_positive: u64,
    pub true_negative: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl ConfusionMatrix {
    pub fn new(true_positive: u64, true_negative: u64, false_positive: u64, false_negative: u64) -> Self {
        Self { true_positive, true_negative, false_positive, false_negative }
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }

    /// Counts in the fixed reporting order `tp,tn,fp,fn`.
    pub fn counts(&self) -> [u64; 4] {
        [self.true_positive, self.true_negative, self.false_positive, self.false_negative]
    }
}

/// Tallies predictions against ground truth.
pub fn confusion_matrix(
    predictions: &[Label],
    truths: &[Label],
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch { preds: predictions.len(), truths: truths.len() });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&pred, &truth) in predictions.iter().zip(truths) {
        match (pred.is_positive(), truth.is_positive()) {
            (true, true) => cm.true_positive += 1,
            (false, false) => cm.true_negative += 1,
            (true, false) => cm.false_positive += 1,
            (false, true) => cm.false_negative += 1,
        }
    }
    Ok(cm)
}

/// All scalar metrics; `None` marks an undefined value (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub dice: Option<f64>,
    pub auc: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "accuracy,precision,recall,specificity,sensitivity,f1,dice,auc";

    /// One CSV row: 6 decimal places, `NA` for undefined values.
    pub fn csv_row(&self) -> String {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.specificity,
            self.sensitivity,
            self.f1,
            self.dice,
            self.auc,
        ]
        .map(format_metric_field)
        .join(",")
    }
}

/// `6`-decimal formatting with `NA` for undefined values, shared by every
/// CSV surface that emits metrics.
pub fn format_metric_field(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".to_string(),
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Derives every scalar metric from the counts; `auc` stays `None` because
/// it needs scores, not counts.
pub fn scalar_metrics(cm: &ConfusionMatrix) -> MetricReport {
    let tp = cm.true_positive;
    let tn = cm.true_negative;
    let fp = cm.false_positive;
    let fnc = cm.false_negative;
    let accuracy = ratio(tp + tn, cm.total());
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fnc);
    let specificity = ratio(tn, tn + fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricReport {
        accuracy,
        precision,
        recall,
        specificity,
        sensitivity: recall,
        f1,
        dice: dice(cm),
        auc: None,
    }
}

/// Overlap coefficient `2 tp / (2 tp + fp + fn)`; `None` when the
/// denominator is zero.
pub fn dice(cm: &ConfusionMatrix) -> Option<f64> {
    let den = 2 * cm.true_positive + cm.false_positive + cm.false_negative;
    (den > 0).then(|| 2.0 * cm.true_positive as f64 / den as f64)
}

/// Area under the ROC curve via the Mann-Whitney pair statistic: the
/// probability that a random positive outranks a random negative, ties
/// counting one half. Computed through average ranks, equivalent to
/// trapezoidal integration over all thresholds.
pub fn roc_auc(scores: &[f64], truths: &[Label]) -> Result<f64, MetricsError> {
    if scores.len() != truths.len() {
        return Err(MetricsError::ScoreLengthMismatch { scores: scores.len(), truths: truths.len() });
    }
    let positives = truths.iter().filter(|l| l.is_positive()).count();
    let negatives = truths.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if truths[idx].is_positive() {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = positives as f64;
    let n_neg = negatives as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use Label::{NotPresent as N, Present as P};

    /// Counts published alongside the reference confusion matrix.
    fn reference_counts() -> ConfusionMatrix {
        ConfusionMatrix::new(141, 145, 7, 4)
    }

    #[test]
    fn confusion_matrix_basic() {
        let cm = confusion_matrix(&[P, N], &[P, N]).unwrap();
        assert_eq!(cm.counts(), [1, 1, 0, 0]);

        let cm = confusion_matrix(&[P], &[N]).unwrap();
        assert_eq!(cm.counts(), [0, 0, 1, 0]);
    }

    #[test]
    fn confusion_matrix_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let preds: Vec<Label> =
                (0..10).map(|_| if rng.random::<bool>() { P } else { N }).collect();
            let truths: Vec<Label> =
                (0..10).map(|_| if rng.random::<bool>() { P } else { N }).collect();
            let cm = confusion_matrix(&preds, &truths).unwrap();
            let count = |f: &dyn Fn(Label, Label) -> bool| {
                preds.iter().zip(&truths).filter(|(&p, &t)| f(p, t)).count() as u64
            };
            assert_eq!(cm.true_positive, count(&|p, t| p == P && t == P));
            assert_eq!(cm.true_negative, count(&|p, t| p == N && t == N));
            assert_eq!(cm.false_positive, count(&|p, t| p == P && t == N));
            assert_eq!(cm.false_negative, count(&|p, t| p == N && t == P));
        }
    }

    #[test]
    fn confusion_matrix_errors() {
        assert!(matches!(confusion_matrix(&[P], &[]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion_matrix(&[], &[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn reference_precision() {
        let m = scalar_metrics(&reference_counts());
        // 141 / 148; the published rounded figure is 95.2
        assert!((m.precision.unwrap() - 141.0 / 148.0).abs() < 1e-9);
        assert!((m.precision.unwrap() - 0.952703).abs() < 5e-7);
    }

    #[test]
    fn reference_accuracy_recall_specificity() {
        let m = scalar_metrics(&reference_counts());
        assert!((m.accuracy.unwrap() - 286.0 / 297.0).abs() < 1e-9);
        assert!((m.recall.unwrap() - 141.0 / 145.0).abs() < 1e-9);
        assert!((m.specificity.unwrap() - 145.0 / 152.0).abs() < 1e-9);
        assert_eq!(m.recall, m.sensitivity);
    }

    #[test]
    fn reference_dice() {
        let d = dice(&reference_counts()).unwrap();
        assert!((d - 282.0 / 293.0).abs() < 1e-9);
        assert!((d - 0.962457).abs() < 5e-7);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let cm = ConfusionMatrix::new(10, 10, 0, 0);
        let m = scalar_metrics(&cm);
        for v in [m.accuracy, m.precision, m.recall, m.specificity, m.sensitivity, m.f1, m.dice] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn dice_edge_cases() {
        assert_eq!(dice(&ConfusionMatrix::new(0, 5, 2, 1)), Some(0.0));
        assert_eq!(dice(&ConfusionMatrix::new(0, 5, 0, 0)), None);
    }

    #[test]
    fn undefined_flags_on_zero_denominators() {
        // no predicted positives: precision undefined
        let m = scalar_metrics(&ConfusionMatrix::new(0, 5, 0, 3));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        // no actual negatives: specificity undefined
        let m = scalar_metrics(&ConfusionMatrix::new(5, 0, 0, 0));
        assert_eq!(m.specificity, None);
    }

    #[test]
    fn f1_equals_dice_when_defined() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let cm = ConfusionMatrix::new(
                rng.random_range(1..50),
                rng.random_range(0..50),
                rng.random_range(0..50),
                rng.random_range(0..50),
            );
            let m = scalar_metrics(&cm);
            assert!((m.f1.unwrap() - m.dice.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_is_class_weighted_mix_of_sensitivity_specificity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cm = ConfusionMatrix::new(
                rng.random_range(1..40),
                rng.random_range(1..40),
                rng.random_range(0..40),
                rng.random_range(0..40),
            );
            let m = scalar_metrics(&cm);
            let pos = (cm.true_positive + cm.false_negative) as f64;
            let neg = (cm.true_negative + cm.false_positive) as f64;
            let mixed = (m.sensitivity.unwrap() * pos + m.specificity.unwrap() * neg) / (pos + neg);
            assert!((m.accuracy.unwrap() - mixed).abs() < 1e-12);
            let lo = m.sensitivity.unwrap().min(m.specificity.unwrap());
            let hi = m.sensitivity.unwrap().max(m.specificity.unwrap());
            assert!(m.accuracy.unwrap() >= lo - 1e-12 && m.accuracy.unwrap() <= hi + 1e-12);
        }
    }

    #[test]
    fn auc_separated_and_inverted() {
        let truths = [N, N, P, P];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &truths).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &truths).unwrap(), 0.0);
    }

    #[test]
    fn auc_pairwise_hand_example() {
        // pairs (0.35 vs 0.1) + (0.35 vs 0.4) + (0.8 vs 0.1) + (0.8 vs 0.4)
        // = (1 + 0 + 1 + 1) / 4
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[N, N, P, P]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_counts_ties_as_half() {
        let auc = roc_auc(&[0.5, 0.5], &[N, P]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(matches!(roc_auc(&[0.5, 0.7], &[P, P]), Err(MetricsError::SingleClass)));
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let truths: Vec<Label> =
            (0..30).map(|_| if rng.random::<bool>() { P } else { N }).collect();
        if truths.iter().any(|l| l.is_positive()) && truths.iter().any(|l| !l.is_positive()) {
            let base = roc_auc(&scores, &truths).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp() + 3.0).collect();
            assert!((roc_auc(&warped, &truths).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_score_negation_complements() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // distinct scores so no ties
        let scores: Vec<f64> = (0..20).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let truths: Vec<Label> =
            (0..20).map(|_| if rng.random::<bool>() { P } else { N }).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &truths).unwrap();
        let b = roc_auc(&negated, &truths).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_row_formatting() {
        let m = MetricReport {
            accuracy: Some(286.0 / 297.0),
            precision: Some(141.0 / 148.0),
            recall: Some(141.0 / 145.0),
            specificity: Some(145.0 / 152.0),
            sensitivity: Some(141.0 / 145.0),
            f1: Some(0.5),
            dice: Some(282.0 / 293.0),
            auc: None,
        };
        assert_eq!(
            m.csv_row(),
            "0.962963,0.952703,0.972414,0.953947,0.972414,0.500000,0.962457,NA"
        );
    }

    #[test]
    fn label_parse_display_roundtrip() {
        assert_eq!("Present".parse::<Label>().unwrap(), P);
        assert_eq!("NotPresent".parse::<Label>().unwrap(), N);
        assert!("yes".parse::<Label>().is_err());
        assert_eq!(P.to_string(), "Present");
        assert_eq!(Label::from_class_index(P.class_index()), P);
        assert_eq!(Label::from_class_index(N.class_index()), N);
    }
}
