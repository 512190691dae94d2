//! Weighted F1 per task, the combined weighted fine-grained score, evaluation
//! reports and misclassification dumps.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, DataError, Dimension, LabelCounts, LabelSet};
use crate::strategies::{Prediction, PredictionSet};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {preds} predictions vs {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("cannot score an empty list")]
    Empty,
    #[error("all positive supports are zero")]
    ZeroSupport,
    #[error("no prediction for gold post `{0}`")]
    MissingPrediction(String),
    #[error("evaluation corpus has no gold-hostile posts to score fine-grained dimensions on")]
    NoHostilePosts,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryConfusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl BinaryConfusion {
    pub fn from_pairs(preds: &[bool], golds: &[bool]) -> Result<Self, MetricsError> {
        if preds.len() != golds.len() {
            return Err(MetricsError::LengthMismatch {
                preds: preds.len(),
                golds: golds.len(),
            });
        }
        if preds.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut c = BinaryConfusion::default();
        for (&p, &g) in preds.iter().zip(golds) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 of the positive class; 0 when precision + recall is 0.
    pub fn positive_f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }

    /// F1 of the negative class, treating 0 as the label of interest.
    pub fn negative_f1(&self) -> f64 {
        f1_from_counts(self.tn, self.fn_, self.fp)
    }

    /// Support-weighted mean of the two per-class F1 scores.
    pub fn weighted_f1(&self) -> f64 {
        let pos = (self.tp + self.fn_) as f64;
        let neg = (self.tn + self.fp) as f64;
        (pos * self.positive_f1() + neg * self.negative_f1()) / (pos + neg)
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn weighted_f1(preds: &[bool], golds: &[bool]) -> Result<f64, MetricsError> {
    Ok(BinaryConfusion::from_pairs(preds, golds)?.weighted_f1())
}

/// How a single dimension is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Two-class F1 averaged with class supports.
    #[default]
    Weighted,
    /// F1 of the positive class only.
    Positive,
}

impl F1Mode {
    pub fn score(self, preds: &[bool], golds: &[bool]) -> Result<f64, MetricsError> {
        let c = BinaryConfusion::from_pairs(preds, golds)?;
        Ok(match self {
            F1Mode::Weighted => c.weighted_f1(),
            F1Mode::Positive => c.positive_f1(),
        })
    }
}

/// `Σ (support_c / Σ supports) · f1_c`; scores and supports pair up by index.
pub fn weighted_fine_grained(f1s: &[f64; 4], supports: &[usize; 4]) -> Result<f64, MetricsError> {
    let total: usize = supports.iter().sum();
    if total == 0 {
        return Err(MetricsError::ZeroSupport);
    }
    Ok(f1s
        .iter()
        .zip(supports)
        .map(|(f, &s)| f * s as f64 / total as f64)
        .sum())
}

/// Which positive counts weight the fine-grained combination.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SupportSource {
    /// Positives within the evaluated gold-hostile subset.
    #[default]
    EvaluationSubset,
    /// Externally supplied counts, e.g. for the whole annotated corpus.
    Corpus(LabelCounts),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub f1_mode: F1Mode,
    pub supports: SupportSource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            f1_mode: F1Mode::Weighted,
            supports: SupportSource::EvaluationSubset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supports {
    pub hostile: usize,
    pub fake: usize,
    pub hate: usize,
    pub offensive: usize,
    pub defamation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetDescriptor {
    /// Posts scored for the coarse task.
    pub posts: usize,
    /// Gold-hostile posts the fine dimensions are scored on.
    pub hostile_posts: usize,
    pub fine_subset: String,
    pub support_source: String,
    /// Supports used to weight the combined score.
    pub weighting: Supports,
    pub f1_mode: F1Mode,
    pub threshold: f64,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "hostile")]
    pub hostile_f1: f64,
    #[serde(rename = "defamation")]
    pub defamation_f1: f64,
    #[serde(rename = "fake")]
    pub fake_f1: f64,
    #[serde(rename = "hate")]
    pub hate_f1: f64,
    #[serde(rename = "offensive")]
    pub offensive_f1: f64,
    #[serde(rename = "weighted")]
    pub weighted_fine_grained: f64,
    pub supports: Supports,
    pub subset: SubsetDescriptor,
}

impl MetricsReport {
    pub fn fine_f1(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Hostile => self.hostile_f1,
            Dimension::Fake => self.fake_f1,
            Dimension::Hate => self.hate_f1,
            Dimension::Offensive => self.offensive_f1,
            Dimension::Defamation => self.defamation_f1,
        }
    }
}

/// Scores predictions against gold labels.
///
/// The hostile score covers every post and uses gated labels; each fine
/// dimension is scored on the gold-hostile posts with ungated probabilities.
pub fn evaluate(
    predictions: &PredictionSet,
    gold: &Corpus,
    options: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let by_id: HashMap<&str, &Prediction> = predictions
        .predictions
        .iter()
        .map(|p| (p.id.as_str(), p))
        .collect();
    let labels = gold.labels()?;
    let mut paired = Vec::with_capacity(gold.len());
    for (post, l) in gold.iter().zip(&labels) {
        let p = by_id
            .get(post.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(post.id.clone()))?;
        paired.push((*p, *l));
    }
    score_pairs(&paired, options)
}

pub(crate) fn score_pairs(
    paired: &[(&Prediction, LabelSet)],
    options: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let mode = options.f1_mode;
    let threshold = options.threshold;
    let coarse_pred: Vec<bool> = paired.iter().map(|(p, _)| p.coarse >= threshold).collect();
    let coarse_gold: Vec<bool> = paired.iter().map(|(_, g)| g.hostile).collect();
    let hostile_f1 = mode.score(&coarse_pred, &coarse_gold)?;

    let hostile: Vec<&(&Prediction, LabelSet)> = paired.iter().filter(|(_, g)| g.hostile).collect();
    if hostile.is_empty() {
        return Err(MetricsError::NoHostilePosts);
    }
    let mut fine = [0.0; 4];
    let mut support = [0usize; 4];
    for (k, &dim) in Dimension::FINE.iter().enumerate() {
        let preds: Vec<bool> = hostile.iter().map(|(p, _)| p.fine(dim) >= threshold).collect();
        let golds: Vec<bool> = hostile.iter().map(|(_, g)| g.get(dim)).collect();
        fine[k] = mode.score(&preds, &golds)?;
        support[k] = golds.iter().filter(|&&g| g).count();
    }
    let (weights, source) = match options.supports {
        SupportSource::EvaluationSubset => (support, "evaluation-subset"),
        SupportSource::Corpus(c) => (Dimension::FINE.map(|d| c.get(d)), "corpus"),
    };
    let weighted = weighted_fine_grained(&fine, &weights)?;
    let as_supports = |s: [usize; 4], hostile: usize| Supports {
        hostile,
        fake: s[0],
        hate: s[1],
        offensive: s[2],
        defamation: s[3],
    };
    let gold_hostile = hostile.len();
    Ok(MetricsReport {
        hostile_f1,
        fake_f1: fine[0],
        hate_f1: fine[1],
        offensive_f1: fine[2],
        defamation_f1: fine[3],
        weighted_fine_grained: weighted,
        supports: as_supports(support, gold_hostile),
        subset: SubsetDescriptor {
            posts: paired.len(),
            hostile_posts: gold_hostile,
            fine_subset: "gold-hostile".into(),
            support_source: source.into(),
            weighting: as_supports(
                weights,
                match options.supports {
                    SupportSource::EvaluationSubset => gold_hostile,
                    SupportSource::Corpus(c) => c.hostile,
                },
            ),
            f1_mode: mode,
            threshold,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisclassifiedRow {
    pub id: String,
    pub text: String,
    pub gold: LabelSet,
    pub predicted: LabelSet,
    pub disagreements: usize,
}

/// Posts whose gated labels disagree with gold in any dimension, most
/// disagreeing dimensions first (ties keep corpus order), at most `limit`.
pub fn misclassification_report(
    predictions: &PredictionSet,
    gold: &Corpus,
    limit: usize,
) -> Result<Vec<MisclassifiedRow>, MetricsError> {
    let by_id: HashMap<&str, &Prediction> = predictions
        .predictions
        .iter()
        .map(|p| (p.id.as_str(), p))
        .collect();
    let labels = gold.labels()?;
    let mut rows = Vec::new();
    for (post, g) in gold.iter().zip(labels) {
        let p = by_id
            .get(post.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(post.id.clone()))?;
        let disagreements = Dimension::ALL
            .iter()
            .filter(|&&d| p.labels.get(d) != g.get(d))
            .count();
        if disagreements > 0 {
            rows.push(MisclassifiedRow {
                id: post.id.clone(),
                text: post.text.clone(),
                gold: g,
                predicted: p.labels,
                disagreements,
            });
        }
    }
    rows.sort_by(|a, b| b.disagreements.cmp(&a.disagreements));
    rows.truncate(limit);
    Ok(rows)
}

pub fn write_misclassified<W: Write>(wtr: W, rows: &[MisclassifiedRow]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(wtr);
    w.write_record(["id", "text", "gold", "predicted", "disagreements"])?;
    for r in rows {
        w.write_record([
            r.id.as_str(),
            r.text.as_str(),
            &r.gold.to_field(),
            &r.predicted.to_field(),
            &r.disagreements.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders reports as a markdown table in the Hostile/Defamation/Fake/Hate/
/// Offensive/Weighted column order.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(
        "| Run | Hostile | Defamation | Fake | Hate | Offensive | Weighted |\n|---|---|---|---|---|---|---|\n",
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.hostile_f1,
            r.defamation_f1,
            r.fake_f1,
            r.hate_f1,
            r.offensive_f1,
            r.weighted_fine_grained
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledPost;
    use crate::strategies::FineProbabilities;

    /// Textbook per-class precision/recall/F1 over both labels.
    fn oracle_weighted_f1(preds: &[bool], golds: &[bool]) -> f64 {
        let n = golds.len() as f64;
        let mut total = 0.0;
        for class in [false, true] {
            let tp = preds.iter().zip(golds).filter(|(&p, &g)| p == class && g == class).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
            let actual = golds.iter().filter(|&&g| g == class).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            total += actual / n * f1;
        }
        total
    }

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        for golds in [b(&[1, 0, 1]), b(&[0, 0]), b(&[1])] {
            assert_eq!(weighted_f1(&golds, &golds).unwrap(), 1.0);
        }
    }

    #[test]
    fn hand_computed_confusion() {
        // pos F1 = 2/3, neg F1 = 0.8, supports (2, 2).
        let w = weighted_f1(&b(&[1, 0, 0, 0]), &b(&[1, 1, 0, 0])).unwrap();
        assert!((w - 0.733_333_333_333_333_3).abs() < 1e-12);
        assert!((w - oracle_weighted_f1(&b(&[1, 0, 0, 0]), &b(&[1, 1, 0, 0]))).abs() < 1e-15);
    }

    #[test]
    fn single_class_gold_all_wrong() {
        assert_eq!(weighted_f1(&b(&[0, 0, 0]), &b(&[1, 1, 1])).unwrap(), 0.0);
    }

    #[test]
    fn errors_on_bad_lengths() {
        assert!(matches!(weighted_f1(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(
            weighted_f1(&[true], &[true, false]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn agrees_with_oracle_on_random_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let p_rate = rng.random::<f64>();
            let g_rate = rng.random::<f64>();
            let preds: Vec<bool> = (0..n).map(|_| rng.random_bool(p_rate)).collect();
            let golds: Vec<bool> = (0..n).map(|_| rng.random_bool(g_rate)).collect();
            let w = weighted_f1(&preds, &golds).unwrap();
            assert!((w - oracle_weighted_f1(&preds, &golds)).abs() <= 1e-12);
        }
    }

    #[test]
    fn fine_grained_examples() {
        let w = weighted_fine_grained(&[0.7741, 0.5725, 0.42, 0.6120], &[1638, 1132, 810, 1071]).unwrap();
        assert!((w - 2911.6978 / 4651.0).abs() < 1e-12);
        assert!((w - 0.626037).abs() < 1e-6);
        assert!((w - 0.6250).abs() < 0.002);
        let s = weighted_fine_grained(&[0.37; 4], &[5, 1, 9, 2]).unwrap();
        assert!((s - 0.37).abs() < 1e-15);
        assert_eq!(weighted_fine_grained(&[1.0, 0.0, 0.0, 0.0], &[1, 1, 1, 1]).unwrap(), 0.25);
        assert!(matches!(
            weighted_fine_grained(&[0.5; 4], &[0; 4]),
            Err(MetricsError::ZeroSupport)
        ));
    }

    fn corpus(labels: &[LabelSet]) -> Corpus {
        Corpus::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| LabeledPost {
                    id: format!("p{i}"),
                    text: format!("text {i}"),
                    labels: Some(l),
                })
                .collect(),
        )
        .unwrap()
    }

    fn perfect(c: &Corpus) -> PredictionSet {
        let preds = c
            .iter()
            .map(|p| {
                let l = p.labels.unwrap();
                let pr = |x: bool| if x { 0.9 } else { 0.1 };
                Prediction::gated(
                    p.id.clone(),
                    pr(l.hostile),
                    FineProbabilities {
                        fake: pr(l.fake),
                        hate: pr(l.hate),
                        offensive: pr(l.offensive),
                        defamation: pr(l.defamation),
                    },
                    0.5,
                )
            })
            .collect();
        PredictionSet {
            threshold: 0.5,
            predictions: preds,
        }
    }

    #[test]
    fn evaluate_perfect_is_one() {
        let c = corpus(&[
            LabelSet::from_fine(true, false, true, false),
            LabelSet::non_hostile(),
            LabelSet::from_fine(false, true, false, true),
        ]);
        let r = evaluate(&perfect(&c), &c, &EvalOptions::default()).unwrap();
        for v in [r.hostile_f1, r.fake_f1, r.hate_f1, r.offensive_f1, r.defamation_f1, r.weighted_fine_grained] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn evaluate_all_non_hostile_on_half_hostile() {
        let fake = LabelSet::from_fine(true, false, false, false);
        let c = corpus(&[fake, fake, LabelSet::non_hostile(), LabelSet::non_hostile()]);
        let preds = PredictionSet {
            threshold: 0.5,
            predictions: c
                .iter()
                .map(|p| Prediction::gated(p.id.clone(), 0.1, FineProbabilities::default(), 0.5))
                .collect(),
        };
        let r = evaluate(&preds, &c, &EvalOptions::default()).unwrap();
        // tn = 2, fn = 2: positive F1 0, negative F1 2/3, equal supports.
        assert!((r.hostile_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_json_has_table_fields() {
        let c = corpus(&[LabelSet::from_fine(true, true, false, false), LabelSet::non_hostile()]);
        let r = evaluate(&perfect(&c), &c, &EvalOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["defamation", "fake", "hate", "hostile", "offensive", "subset", "supports", "weighted"]
        );
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let c = corpus(&[LabelSet::from_fine(true, false, false, false)]);
        let empty = PredictionSet {
            threshold: 0.5,
            predictions: vec![],
        };
        assert!(matches!(
            evaluate(&empty, &c, &EvalOptions::default()),
            Err(MetricsError::MissingPrediction(id)) if id == "p0"
        ));
    }

    #[test]
    fn misclassification_ordering_and_limit() {
        let c = corpus(&[
            LabelSet::from_fine(true, false, false, false),
            LabelSet::non_hostile(),
            LabelSet::from_fine(false, true, false, false),
        ]);
        let mut preds = perfect(&c);
        assert!(misclassification_report(&preds, &c, 10).unwrap().is_empty());
        // p0: fake missed and hate added (2 dims); p2: offensive added (1 dim).
        preds.predictions[0].labels = LabelSet::from_fine(false, true, false, false);
        preds.predictions[2].labels = LabelSet::from_fine(false, true, true, false);
        let rows = misclassification_report(&preds, &c, 10).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].id.as_str(), rows[0].disagreements), ("p0", 2));
        assert_eq!((rows[1].id.as_str(), rows[1].disagreements), ("p2", 1));
        assert!(misclassification_report(&preds, &c, 0).unwrap().is_empty());
    }
}
