//! Multi-label evaluation metrics over per-class scores.
//!
//! Conventions, fixed here and relied on by the tests:
//! * A class is predicted positive when its score is `>= threshold`.
//! * `0/0` style degeneracies in F1 resolve to 0.
//! * Macro averages run over every class, including empty ones, except for
//!   AUC, where classes without both a positive and a negative are excluded
//!   and reported.
//! * Rankings break score ties by the lower sample index (average precision)
//!   or the lower class index (precision at k); AUC counts ties as half.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::label_algebra::LabelSet;

/// Micro pools counts over all (sample, class) cells; macro averages
/// per-class values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
}

/// Scores (`samples x classes`), ground-truth label sets, and the decision
/// threshold. The label universe must match the score width.
#[derive(Debug, Clone)]
pub struct Predictions {
    scores: Array2<f64>,
    truths: Vec<LabelSet>,
    threshold: f64,
}

impl Predictions {
    pub fn new(scores: Array2<f64>, truths: Vec<LabelSet>, threshold: f64) -> Result<Self> {
        if scores.nrows() != truths.len() {
            return Err(Error::InvalidConfig(format!(
                "{} score rows but {} truth sets",
                scores.nrows(),
                truths.len()
            )));
        }
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::Degenerate("empty prediction matrix".into()));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("prediction scores".into()));
        }
        if !(threshold.is_finite() && threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie strictly inside (0, 1), got {threshold}"
            )));
        }
        for t in &truths {
            if t.universe_size() != scores.ncols() {
                return Err(Error::UniverseMismatch {
                    left: t.universe_size(),
                    right: scores.ncols(),
                });
            }
        }
        Ok(Self {
            scores,
            truths,
            threshold,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn truths(&self) -> &[LabelSet] {
        &self.truths
    }

    fn is_positive(&self, sample: usize, class: usize) -> bool {
        self.truths[sample].contains(class)
    }

    fn is_predicted(&self, sample: usize, class: usize) -> bool {
        self.scores[[sample, class]] >= self.threshold
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn per_class_counts(preds: &Predictions) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); preds.num_classes()];
    for i in 0..preds.num_samples() {
        for (c, count) in counts.iter_mut().enumerate() {
            match (preds.is_predicted(i, c), preds.is_positive(i, c)) {
                (true, true) => count.tp += 1,
                (true, false) => count.fp += 1,
                (false, true) => count.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// F1 at the decision threshold.
pub fn f1(preds: &Predictions, averaging: Averaging) -> f64 {
    let counts = per_class_counts(preds);
    match averaging {
        Averaging::Micro => {
            let pooled = counts.iter().fold(Counts::default(), |acc, c| Counts {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                fn_: acc.fn_ + c.fn_,
            });
            pooled.f1()
        }
        Averaging::Macro => counts.iter().map(Counts::f1).sum::<f64>() / counts.len() as f64,
    }
}

/// Sample indices ordered by descending score for one class, ties broken by
/// the lower sample index.
fn ranked_samples(preds: &Predictions, class: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.num_samples()).collect();
    order.sort_by(|&a, &b| {
        preds.scores[[b, class]]
            .partial_cmp(&preds.scores[[a, class]])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order
}

/// Mean over classes (with at least one positive) of average precision.
pub fn mean_average_precision(preds: &Predictions) -> Result<f64> {
    let mut sum = 0.0;
    let mut classes = 0usize;
    for class in 0..preds.num_classes() {
        let positives = (0..preds.num_samples())
            .filter(|&i| preds.is_positive(i, class))
            .count();
        if positives == 0 {
            continue;
        }
        classes += 1;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &sample) in ranked_samples(preds, class).iter().enumerate() {
            if preds.is_positive(sample, class) {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / positives as f64;
    }
    if classes == 0 {
        return Err(Error::Degenerate(
            "no class has a positive sample, so average precision is undefined".into(),
        ));
    }
    Ok(sum / classes as f64)
}

/// Fraction of the `k` top-scored classes per sample that are true labels,
/// averaged over samples. Ties go to the lower class index.
pub fn precision_at_k(preds: &Predictions, k: usize) -> Result<f64> {
    let classes = preds.num_classes();
    if k == 0 || k > classes {
        return Err(Error::InvalidConfig(format!(
            "k must lie in [1, {classes}], got {k}"
        )));
    }
    let mut total = 0.0;
    for i in 0..preds.num_samples() {
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| {
            preds.scores[[i, b]]
                .partial_cmp(&preds.scores[[i, a]])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        let hits = order[..k]
            .iter()
            .filter(|&&c| preds.is_positive(i, c))
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / preds.num_samples() as f64)
}

/// AUC value plus the classes a macro average had to exclude.
#[derive(Debug, Clone, Serialize)]
pub struct AucReport {
    pub value: f64,
    /// Classes lacking a positive or lacking a negative (macro only).
    pub excluded_classes: Vec<usize>,
}

/// Mann-Whitney AUC of one score list: average rank of positives, ties
/// counted as half.
fn auc_of(cells: &mut [(f64, bool)]) -> Option<f64> {
    let positives = cells.iter().filter(|(_, p)| *p).count();
    let negatives = cells.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    cells.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j + 1 < cells.len() && cells[j + 1].0 == cells[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for cell in &cells[i..=j] {
            if cell.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    Some(u / (positives as f64 * negatives as f64))
}

/// Area under the ROC curve. Micro pools all cells; macro averages classes
/// that have both a positive and a negative and reports the rest as
/// excluded. Errors when nothing is rankable.
pub fn auc(preds: &Predictions, averaging: Averaging) -> Result<AucReport> {
    match averaging {
        Averaging::Micro => {
            let mut cells: Vec<(f64, bool)> =
                Vec::with_capacity(preds.num_samples() * preds.num_classes());
            for i in 0..preds.num_samples() {
                for c in 0..preds.num_classes() {
                    cells.push((preds.scores[[i, c]], preds.is_positive(i, c)));
                }
            }
            match auc_of(&mut cells) {
                Some(value) => Ok(AucReport {
                    value,
                    excluded_classes: Vec::new(),
                }),
                None => Err(Error::Degenerate(
                    "micro AUC needs at least one positive and one negative cell".into(),
                )),
            }
        }
        Averaging::Macro => {
            let mut sum = 0.0;
            let mut included = 0usize;
            let mut excluded = Vec::new();
            for c in 0..preds.num_classes() {
                let mut cells: Vec<(f64, bool)> = (0..preds.num_samples())
                    .map(|i| (preds.scores[[i, c]], preds.is_positive(i, c)))
                    .collect();
                match auc_of(&mut cells) {
                    Some(value) => {
                        sum += value;
                        included += 1;
                    }
                    None => excluded.push(c),
                }
            }
            if included == 0 {
                return Err(Error::Degenerate(
                    "every class lacks a positive or a negative, so macro AUC is undefined".into(),
                ));
            }
            Ok(AucReport {
                value: sum / included as f64,
                excluded_classes: excluded,
            })
        }
    }
}

/// The full metric set reported after training.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub mean_average_precision: f64,
    /// Keyed by k, ascending.
    pub precision_at: BTreeMap<usize, f64>,
    pub micro_auc: f64,
    pub macro_auc: f64,
    /// Classes the macro AUC had to skip.
    pub macro_auc_excluded: Vec<usize>,
}

impl Metrics {
    /// Flat `name -> value` map, keys sorted, as written to `metrics.json`
    /// and the one-row CSV.
    pub fn to_flat_map(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        map.insert("micro_f1".to_string(), self.micro_f1);
        map.insert("macro_f1".to_string(), self.macro_f1);
        map.insert("map".to_string(), self.mean_average_precision);
        for (k, v) in &self.precision_at {
            map.insert(format!("p_at_{k}"), *v);
        }
        map.insert("micro_auc".to_string(), self.micro_auc);
        map.insert("macro_auc".to_string(), self.macro_auc);
        map
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_flat_map()).expect("metric map");
        out.push('\n');
        out
    }

    /// Header and value row of a one-row CSV.
    pub fn to_csv(&self) -> String {
        let map = self.to_flat_map();
        let header: Vec<&str> = map.keys().map(String::as_str).collect();
        let values: Vec<String> = map.values().map(|v| v.to_string()).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

/// Computes every metric at once. `ks` values must each lie in
/// `[1, num_classes]`.
pub fn evaluate_all(preds: &Predictions, ks: &[usize]) -> Result<Metrics> {
    let mut precision_at = BTreeMap::new();
    for &k in ks {
        precision_at.insert(k, precision_at_k(preds, k)?);
    }
    let macro_report = auc(preds, Averaging::Macro)?;
    Ok(Metrics {
        micro_f1: f1(preds, Averaging::Micro),
        macro_f1: f1(preds, Averaging::Macro),
        mean_average_precision: mean_average_precision(preds)?,
        precision_at,
        micro_auc: auc(preds, Averaging::Micro)?.value,
        macro_auc: macro_report.value,
        macro_auc_excluded: macro_report.excluded_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn truth(universe: usize, indices: &[usize]) -> LabelSet {
        LabelSet::from_indices(universe, indices.iter().copied()).unwrap()
    }

    /// 4 samples, 3 classes, scores chosen so every metric is computable by
    /// hand.
    fn fixture() -> Predictions {
        let scores = array![
            [0.9, 0.2, 0.4],
            [0.6, 0.7, 0.1],
            [0.3, 0.8, 0.5],
            [0.1, 0.4, 0.6],
        ];
        let truths = vec![
            truth(3, &[0]),
            truth(3, &[0, 1]),
            truth(3, &[1]),
            truth(3, &[2]),
        ];
        Predictions::new(scores, truths, 0.5).unwrap()
    }

    #[test]
    fn validation_rejects_malformed_inputs() {
        let scores = array![[0.5, 0.5]];
        let truths = vec![truth(2, &[0])];
        assert!(Predictions::new(scores.clone(), truths.clone(), 0.5).is_ok());
        assert!(Predictions::new(scores.clone(), truths.clone(), 0.0).is_err());
        assert!(Predictions::new(scores.clone(), truths.clone(), 1.0).is_err());
        assert!(Predictions::new(scores.clone(), vec![truth(3, &[0])], 0.5).is_err());
        assert!(Predictions::new(array![[f64::NAN, 0.0]], truths.clone(), 0.5).is_err());
        assert!(Predictions::new(scores, vec![], 0.5).is_err());
    }

    #[test]
    fn f1_by_hand() {
        let preds = fixture();
        // Predicted (>= 0.5): s0 {0}, s1 {0,1}, s2 {1,2}, s3 {2}.
        // class 0: tp 2 fp 0 fn 0 -> f1 1
        // class 1: tp 2 fp 0 fn 0 -> f1 1
        // class 2: tp 1 fp 1 fn 0 -> f1 2/3
        assert!((f1(&preds, Averaging::Macro) - (1.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        // Pooled: tp 5, fp 1, fn 0 -> 10/11.
        assert!((f1(&preds, Averaging::Micro) - 10.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn f1_zero_denominator_convention() {
        // No predictions, no positives for class 1 -> f1 is 0, not NaN.
        let scores = array![[0.9, 0.1], [0.8, 0.2]];
        let truths = vec![truth(2, &[0]), truth(2, &[0])];
        let preds = Predictions::new(scores, truths, 0.5).unwrap();
        assert_eq!(f1(&preds, Averaging::Macro), 0.5 * (1.0 + 0.0));
    }

    #[test]
    fn average_precision_by_hand() {
        let preds = fixture();
        // class 0: ranking s0(.9) s1(.6) s2(.3) s3(.1); positives s0, s1.
        //   AP = (1/1 + 2/2)/2 = 1.
        // class 1: ranking s2(.8) s1(.7) s3(.4) s0(.2); positives s1, s2.
        //   AP = (1/1 + 2/2)/2 = 1.
        // class 2: ranking s3(.6) s2(.5) s0(.4) s1(.1); positive s3.
        //   AP = 1.
        assert!((mean_average_precision(&preds).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_tie_goes_to_lower_sample_index() {
        let scores = array![[0.5, 0.0], [0.5, 1.0]];
        let truths = vec![truth(2, &[1]), truth(2, &[0, 1])];
        let preds = Predictions::new(scores, truths, 0.5).unwrap();
        // class 0: scores tie at 0.5, order s0 then s1, positive s1 -> AP 1/2.
        // class 1: scores 0.0, 1.0, both positive -> AP = (1/1 + 2/2)/2 = 1.
        assert!((mean_average_precision(&preds).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn precision_at_k_by_hand() {
        let preds = fixture();
        // k=1 top class per sample: s0 -> 0 (hit), s1 -> 1 (hit), s2 -> 1
        // (hit), s3 -> 2 (hit).
        assert!((precision_at_k(&preds, 1).unwrap() - 1.0).abs() < 1e-15);
        // k=2: s0 {0,2} 1 hit; s1 {1,0} 2 hits; s2 {1,2} 1 hit; s3 {2,1} 1 hit.
        assert!((precision_at_k(&preds, 2).unwrap() - (0.5 + 1.0 + 0.5 + 0.5) / 4.0).abs() < 1e-15);
        assert!(precision_at_k(&preds, 0).is_err());
        assert!(precision_at_k(&preds, 4).is_err());
    }

    #[test]
    fn precision_at_k_tie_goes_to_lower_class_index() {
        let scores = array![[0.7, 0.7, 0.1]];
        let truths = vec![truth(3, &[1])];
        let preds = Predictions::new(scores, truths, 0.5).unwrap();
        // Classes 0 and 1 tie; k=1 picks class 0, a miss.
        assert_eq!(precision_at_k(&preds, 1).unwrap(), 0.0);
        assert_eq!(precision_at_k(&preds, 2).unwrap(), 0.5);
    }

    #[test]
    fn auc_by_hand_with_ties() {
        // One class; positives score {0.8, 0.5}, negatives {0.5, 0.2}.
        // Pairs: (0.8 vs 0.5) win, (0.8 vs 0.2) win, (0.5 vs 0.5) half,
        // (0.5 vs 0.2) win -> (3 + 0.5)/4.
        let scores = array![[0.8, 1.0], [0.5, 1.0], [0.5, 0.0], [0.2, 0.0]];
        let truths = vec![
            truth(2, &[0, 1]),
            truth(2, &[0, 1]),
            truth(2, &[1]),
            truth(2, &[1]),
        ];
        let preds = Predictions::new(scores, truths, 0.5).unwrap();
        let report = auc(&preds, Averaging::Macro).unwrap();
        // class 0 as computed above; class 1 has no negative -> excluded.
        assert!((report.value - 3.5 / 4.0).abs() < 1e-15);
        assert_eq!(report.excluded_classes, vec![1]);
    }

    #[test]
    fn degenerate_auc_errors() {
        let scores = array![[0.9, 0.1], [0.8, 0.3]];
        let truths = vec![truth(2, &[0, 1]), truth(2, &[0, 1])];
        let preds = Predictions::new(scores, truths, 0.5).unwrap();
        assert!(auc(&preds, Averaging::Macro).is_err());
        assert!(auc(&preds, Averaging::Micro).is_err());
    }

    #[test]
    fn monotone_transforms_leave_rank_metrics_unchanged() {
        let preds = fixture();
        let map_before = mean_average_precision(&preds).unwrap();
        let p1_before = precision_at_k(&preds, 2).unwrap();
        let auc_before = auc(&preds, Averaging::Micro).unwrap().value;
        // Strictly increasing transform of every score.
        let transformed = preds.scores().mapv(|s| (3.0 * s).exp() + 0.1 * s);
        let preds2 = Predictions::new(transformed, preds.truths().to_vec(), 0.5).unwrap();
        assert_eq!(mean_average_precision(&preds2).unwrap(), map_before);
        assert_eq!(precision_at_k(&preds2, 2).unwrap(), p1_before);
        assert_eq!(auc(&preds2, Averaging::Micro).unwrap().value, auc_before);
    }

    #[test]
    fn flat_outputs_are_ordered_and_complete() {
        let preds = fixture();
        let metrics = evaluate_all(&preds, &[1, 2]).unwrap();
        let map = metrics.to_flat_map();
        let keys: Vec<&str> = map.keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "macro_auc",
                "macro_f1",
                "map",
                "micro_auc",
                "micro_f1",
                "p_at_1",
                "p_at_2"
            ]
        );
        let csv = metrics.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "macro_auc,macro_f1,map,micro_auc,micro_f1,p_at_1,p_at_2"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
        // JSON form parses back to the same numbers.
        let parsed: BTreeMap<String, f64> = serde_json::from_str(&metrics.to_json()).unwrap();
        assert_eq!(parsed, map);
    }
}
