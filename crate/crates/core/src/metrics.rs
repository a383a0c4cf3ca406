//! Classification and OOD-detection metrics. Outliers are the positive
//! class and higher scores mean "more OOD".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Prediction;

/// Scores of the evaluated nodes with their identity (`true` = OOD).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNodes {
    scores: Vec<f64>,
    is_ood: Vec<bool>,
}

impl ScoredNodes {
    pub fn new(scores: Vec<f64>, is_ood: Vec<bool>) -> Result<Self> {
        if scores.len() != is_ood.len() {
            return Err(Error::Metric(format!(
                "{} scores for {} labels",
                scores.len(),
                is_ood.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Metric("no nodes to score".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Metric(format!(
                "non-finite score {} at position {i}",
                scores[i]
            )));
        }
        Ok(ScoredNodes { scores, is_ood })
    }

    /// Restricts per-node `scores` and `identity` (1 = OOD) to `mask`.
    pub fn select(scores: &[f64], identity: &[u8], mask: &[usize]) -> Result<Self> {
        Self::new(
            mask.iter().map(|&v| scores[v]).collect(),
            mask.iter()
                .map(|&v| identity[v] == crate::graph::OOD)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_ood(&self) -> &[bool] {
        &self.is_ood
    }

    pub fn positives(&self) -> usize {
        self.is_ood.iter().filter(|&&p| p).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn require_both(&self, metric: &str) -> Result<()> {
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(Error::Metric(format!(
                "{metric} needs outliers and inliers, got {} and {}",
                self.positives(),
                self.negatives()
            )));
        }
        Ok(())
    }

    fn require_positive(&self, metric: &str) -> Result<()> {
        if self.positives() == 0 {
            return Err(Error::Metric(format!(
                "{metric} needs at least one outlier"
            )));
        }
        Ok(())
    }

    /// Cumulative (tp, fp) after each group of tied scores, highest first,
    /// with the threshold equal to the group's score.
    fn sweep(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                if self.is_ood[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            out.push((s, tp, fp));
        }
        out
    }
}

/// Mann-Whitney AUROC, ties counted one half.
pub fn auroc(s: &ScoredNodes) -> Result<f64> {
    s.require_both("auroc")?;
    let (p, n) = (s.positives() as u128, s.negatives() as u128);
    // twice the U statistic: each outlier earns 2 per inlier scored below
    // it and 1 per tied inlier
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let sweep = s.sweep();
    for k in (0..sweep.len()).rev() {
        let (_, tp, fp) = sweep[k];
        let (tp0, fp0) = if k == 0 {
            (0, 0)
        } else {
            (sweep[k - 1].1, sweep[k - 1].2)
        };
        let (pos_g, neg_g) = ((tp - tp0) as u128, (fp - fp0) as u128);
        twice_u += pos_g * (2 * neg_below + neg_g);
        neg_below += neg_g;
    }
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Area under precision-recall: `Σ (R_k - R_{k-1}) P_k` over the
/// descending unique-threshold sweep.
pub fn aupr(s: &ScoredNodes) -> Result<f64> {
    s.require_positive("aupr")?;
    let p = s.positives() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in s.sweep() {
        let recall = tp as f64 / p;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// FPR at the largest threshold whose TPR reaches `target`
/// (nodes with score ≥ θ are flagged OOD).
pub fn fpr_at_tpr(s: &ScoredNodes, target: f64) -> Result<f64> {
    s.require_positive("fpr_at_tpr")?;
    let (p, n) = (s.positives() as f64, s.negatives() as f64);
    for (_, tp, fp) in s.sweep() {
        if tp as f64 / p >= target {
            return Ok(if n == 0.0 { 0.0 } else { fp as f64 / n });
        }
    }
    Ok(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// ROC points `(fpr, tpr)` from `(0, 0)` at θ = +∞ to `(1, 1)`.
pub fn roc_curve(s: &ScoredNodes) -> Result<Vec<CurvePoint>> {
    s.require_both("roc_curve")?;
    let (p, n) = (s.positives() as f64, s.negatives() as f64);
    let mut out = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    for (threshold, tp, fp) in s.sweep() {
        out.push(CurvePoint {
            threshold,
            x: fp as f64 / n,
            y: tp as f64 / p,
        });
    }
    Ok(out)
}

/// Precision-recall points `(recall, precision)`, one per unique threshold.
pub fn pr_curve(s: &ScoredNodes) -> Result<Vec<CurvePoint>> {
    s.require_positive("pr_curve")?;
    let p = s.positives() as f64;
    Ok(s.sweep()
        .into_iter()
        .map(|(threshold, tp, fp)| CurvePoint {
            threshold,
            x: tp as f64 / p,
            y: tp as f64 / (tp + fp) as f64,
        })
        .collect())
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of `(node, class)` pairs where the argmax prediction is right.
pub fn accuracy(predicted: &[usize], labelled: &[(usize, usize)]) -> Result<f64> {
    if labelled.is_empty() {
        return Err(Error::Metric("accuracy over an empty mask".into()));
    }
    let hits = labelled.iter().filter(|&&(v, y)| predicted[v] == y).count();
    Ok(hits as f64 / labelled.len() as f64)
}

/// Support-weighted F1 from per-class counts.
pub fn weighted_f1(true_pos: &[usize], predicted: &[usize], actual: &[usize]) -> f64 {
    let total: usize = actual.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for c in 0..actual.len() {
        let denom = predicted[c] + actual[c];
        if denom > 0 && actual[c] > 0 {
            acc += actual[c] as f64 * (2 * true_pos[c]) as f64 / denom as f64;
        }
    }
    acc / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointF1 {
    pub f1: f64,
    /// Nodes with score ≥ threshold were classed OOD; +∞ means none.
    pub threshold: f64,
}

/// Best weighted F1 of the (C+1)-way task over all thresholds.
///
/// `id_pred[i]` is the ID class predicted for node i (in `0..c`),
/// `truth[i]` its true class with `c` standing for OOD. Among equal F1
/// values the largest threshold wins.
pub fn joint_f1(id_pred: &[usize], scores: &[f64], truth: &[usize], c: usize) -> Result<JointF1> {
    let m = truth.len();
    if m == 0 {
        return Err(Error::Metric("joint_f1 over an empty mask".into()));
    }
    if id_pred.len() != m || scores.len() != m {
        return Err(Error::Metric("joint_f1 inputs differ in length".into()));
    }
    if id_pred.iter().any(|&p| p >= c) || truth.iter().any(|&t| t > c) {
        return Err(Error::Metric("joint_f1 class index out of range".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("joint_f1 needs finite scores".into()));
    }
    let mut tp = vec![0usize; c + 1];
    let mut pred = vec![0usize; c + 1];
    let mut actual = vec![0usize; c + 1];
    for i in 0..m {
        actual[truth[i]] += 1;
        pred[id_pred[i]] += 1;
        if id_pred[i] == truth[i] {
            tp[truth[i]] += 1;
        }
    }
    let mut best = JointF1 {
        f1: weighted_f1(&tp, &pred, &actual),
        threshold: f64::INFINITY,
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut k = 0;
    while k < m {
        let theta = scores[order[k]];
        while k < m && scores[order[k]] == theta {
            let i = order[k];
            pred[id_pred[i]] -= 1;
            if id_pred[i] == truth[i] {
                tp[truth[i]] -= 1;
            }
            pred[c] += 1;
            if truth[i] == c {
                tp[c] += 1;
            }
            k += 1;
        }
        let f1 = weighted_f1(&tp, &pred, &actual);
        if f1 > best.f1 {
            best = JointF1 {
                f1,
                threshold: theta,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Entropy,
    Attention,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Entropy => "ent",
            ScoreKind::Attention => "att",
        }
    }
}

/// Raw entropy of a probability row (natural log, `0 ln 0 = 0`).
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Per-node OOD scores of an evaluated model.
pub fn ood_scores(pred: &Prediction, kind: ScoreKind) -> Result<Vec<f64>> {
    match kind {
        ScoreKind::Entropy => Ok((0..pred.probs.rows())
            .map(|r| entropy(pred.probs.row(r)))
            .collect()),
        ScoreKind::Attention => pred.attention_scores().ok_or_else(|| {
            Error::Metric("attention scores requested from a model without them".into())
        }),
    }
}

/// Detection summary for one score kind on one node set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub joint_f1: f64,
    #[serde(with = "float_or_inf")]
    pub joint_threshold: f64,
}

/// Detection metrics of `scores` over `mask`; `id_pred` and `truth` follow
/// [`joint_f1`] conventions for the whole graph.
pub fn detection_metrics(
    scores: &[f64],
    identity: &[u8],
    mask: &[usize],
    id_pred: &[usize],
    truth: &[usize],
    num_id_classes: usize,
) -> Result<DetectionMetrics> {
    let s = ScoredNodes::select(scores, identity, mask)?;
    let pick = |v: &[usize]| mask.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let joint = joint_f1(&pick(id_pred), s.scores(), &pick(truth), num_id_classes)?;
    Ok(DetectionMetrics {
        auroc: auroc(&s)?,
        aupr: aupr(&s)?,
        fpr95: fpr_at_tpr(&s, 0.95)?,
        joint_f1: joint.f1,
        joint_threshold: joint.threshold,
    })
}

/// Serializes non-finite floats as the strings "inf", "-inf" and "nan".
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&format_value(*v))
        }
    }

    pub fn format_value(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v == f64::INFINITY {
            "inf".into()
        } else if v == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            format!("{v:?}")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(labels: &[u8], scores: &[f64]) -> ScoredNodes {
        ScoredNodes::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&scored(&[1, 0], &[0.9, 0.1])).unwrap(), 1.0);
        assert_eq!(auroc(&scored(&[1, 0, 1, 0], &[0.3; 4])).unwrap(), 0.5);
        assert_eq!(
            auroc(&scored(&[0, 0, 1, 1], &[0.1, 0.8, 0.4, 0.9])).unwrap(),
            0.75
        );
        assert!(matches!(
            auroc(&scored(&[0, 0], &[0.1, 0.2])),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&scored(&[1, 1, 0], &[0.9, 0.8, 0.1])).unwrap(), 1.0);
        let last = scored(&[0, 0, 0, 1], &[0.9, 0.8, 0.7, 0.1]);
        assert!((aupr(&last).unwrap() - 0.25).abs() < 1e-15);
        let flat = scored(&[1, 0, 0, 0, 0], &[0.5; 5]);
        assert!((aupr(&flat).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(
            fpr_at_tpr(&scored(&[1, 0], &[0.9, 0.1]), 0.95).unwrap(),
            0.0
        );
        let s = scored(&[1, 1, 0, 0], &[0.9, 0.8, 0.85, 0.1]);
        assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 0.5);
        assert_eq!(
            fpr_at_tpr(&scored(&[1, 0, 0], &[0.2; 3]), 0.95).unwrap(),
            1.0
        );
    }

    #[test]
    fn roc_endpoints() {
        let s = scored(&[1, 0, 1, 0, 0], &[0.3, 0.1, 0.9, 0.3, 0.5]);
        let roc = roc_curve(&s).unwrap();
        assert_eq!((roc[0].x, roc[0].y), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.x, last.y), (1.0, 1.0));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            accuracy(&[0, 1, 2], &[(0, 0), (1, 1), (2, 2)]).unwrap(),
            1.0
        );
        assert!(
            (accuracy(&[0, 1, 1], &[(0, 0), (1, 1), (2, 2)]).unwrap() - 2.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(accuracy(&[1, 0], &[(0, 0), (1, 1)]).unwrap(), 0.0);
        assert!(accuracy(&[0], &[]).is_err());
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn joint_f1_examples() {
        // perfect
        let j = joint_f1(&[0, 1, 0], &[0.1, 0.2, 0.9], &[0, 1, 2], 2).unwrap();
        assert_eq!(j.f1, 1.0);
        assert_eq!(j.threshold, 0.9);
        // everything flagged OOD
        let truth = [0, 1, 2, 2, 2];
        let p = 3.0 / 5.0;
        assert!(
            (weighted_f1(&[0, 0, 3], &[0, 0, 5], &[1, 1, 3]) - p * 2.0 * p / (p + 1.0)).abs()
                < 1e-15
        );
        let j = joint_f1(&[1, 0, 0, 0, 0], &[0.5; 5], &truth, 2).unwrap();
        assert!((j.f1 - p * 2.0 * p / (p + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn entropy_scores() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn infinite_threshold_round_trips() {
        let m = DetectionMetrics {
            auroc: 0.5,
            aupr: 0.5,
            fpr95: 1.0,
            joint_f1: 0.1,
            joint_threshold: f64::INFINITY,
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"inf\""));
        let back: DetectionMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
