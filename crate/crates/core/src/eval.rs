//! Node-classification accuracy, node-to-node F1 and inference timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MatchingMatrix, Sample};
use crate::model::{discretize, forward, ModelConfig, ModelParams};
use crate::oracle::pair_in_some_isomorphism;

fn check_same_shape(pred: &MatchingMatrix, truth: &MatchingMatrix) -> Result<()> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            left: vec![pred.rows(), pred.cols()],
            right: vec![truth.rows(), truth.cols()],
        });
    }
    Ok(())
}

/// Fraction of data nodes whose matched/unmatched flag agrees between the
/// prediction and the truth. A node counts as matched when some row selects it.
pub fn node_accuracy(pred: &MatchingMatrix, truth: &MatchingMatrix) -> Result<f64> {
    check_same_shape(pred, truth)?;
    if truth.cols() == 0 {
        return Err(Error::invalid("accuracy over zero data nodes"));
    }
    let agree = pred
        .column_image()
        .iter()
        .zip(truth.column_image())
        .filter(|(a, b)| **a == *b)
        .count();
    Ok(agree as f64 / truth.cols() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchScores {
    fn from_counts(hits: usize, predicted: usize, actual: usize) -> MatchScores {
        let precision = if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { hits as f64 / actual as f64 };
        MatchScores {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F1 over the sets of selected `(i, j)` pairs.
pub fn match_f1(pred: &MatchingMatrix, truth: &MatchingMatrix) -> Result<MatchScores> {
    check_same_shape(pred, truth)?;
    let hits = pred
        .choices()
        .iter()
        .zip(truth.choices())
        .filter(|(a, b)| a == b)
        .count();
    Ok(MatchScores::from_counts(hits, pred.rows(), truth.rows()))
}

/// As [`match_f1`], but a predicted pair is also a hit when some exact
/// isomorphism of the clean graphs contains it.
pub fn match_f1_oracle_aware(pred: &MatchingMatrix, sample: &Sample) -> Result<MatchScores> {
    let truth = sample.ground_truth();
    check_same_shape(pred, &truth)?;
    let hits = pred
        .choices()
        .iter()
        .enumerate()
        .filter(|&(i, &j)| truth.get(i, j) || pair_in_some_isomorphism(&sample.query, &sample.data, i, j))
        .count();
    Ok(MatchScores::from_counts(hits, pred.rows(), truth.rows()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Forward pass plus discretisation, in milliseconds.
    pub inference_ms: f64,
    pub predicted: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oracle_aware: bool,
    pub num_samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_inference_ms: f64,
    pub per_sample: Vec<SampleReport>,
}

/// Runs inference on every sample and averages the per-sample metrics.
pub fn evaluate(
    samples: &[Sample],
    params: &ModelParams,
    cfg: &ModelConfig,
    oracle_aware: bool,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty sample set"));
    }
    params.check_shapes(cfg)?;
    let mut per_sample = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        let start = Instant::now();
        let out = forward(sample, params, cfg)?;
        let pred = discretize(&out.op)?;
        let inference_ms = start.elapsed().as_secs_f64() * 1e3;

        let truth = sample.ground_truth();
        let accuracy = node_accuracy(&pred, &truth)?;
        let scores = if oracle_aware {
            match_f1_oracle_aware(&pred, sample)?
        } else {
            match_f1(&pred, &truth)?
        };
        per_sample.push(SampleReport {
            index,
            accuracy,
            precision: scores.precision,
            recall: scores.recall,
            f1: scores.f1,
            inference_ms,
            predicted: pred.choices().to_vec(),
        });
    }
    let n = per_sample.len() as f64;
    let mean = |f: fn(&SampleReport) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        oracle_aware,
        num_samples: per_sample.len(),
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        mean_inference_ms: mean(|r| r.inference_ms),
        per_sample,
    })
}

impl EvalReport {
    /// One row per sample: `index,accuracy,precision,recall,f1,inference_ms`.
    pub fn per_sample_csv(&self) -> String {
        let mut out = String::from("index,accuracy,precision,recall,f1,inference_ms\n");
        for r in &self.per_sample {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.index, r.accuracy, r.precision, r.recall, r.f1, r.inference_ms
            )
            .expect("writing to a String");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(choice: &[usize], cols: usize) -> MatchingMatrix {
        MatchingMatrix::from_choices(choice.to_vec(), cols).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let truth = mm(&[0, 2], 4);
        assert_eq!(node_accuracy(&truth, &truth).unwrap(), 1.0);
        // Predicted image {1, 2} against truth {0, 2}: nodes 0 and 1 disagree.
        assert_eq!(node_accuracy(&mm(&[1, 2], 4), &truth).unwrap(), 0.5);
        // Collapsed prediction {0}: only node 2 disagrees.
        assert_eq!(node_accuracy(&mm(&[0, 0], 4), &truth).unwrap(), 0.75);
        assert!(node_accuracy(&mm(&[0, 1], 3), &truth).is_err());
    }

    #[test]
    fn f1_examples() {
        let truth = mm(&[0, 1, 2], 5);
        let s = match_f1(&mm(&[0, 1, 4], 5), &truth).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.precision, s.recall);
        assert_eq!(s.recall, s.f1);
        let perfect = match_f1(&truth, &truth).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let none = match_f1(&mm(&[3, 3, 3], 5), &truth).unwrap();
        assert_eq!(none.f1, 0.0);
    }

    #[test]
    fn f1_score_degenerate() {
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert_eq!(f1_score(1.0, 0.5), 2.0 / 3.0);
        assert_eq!(MatchScores::from_counts(0, 0, 3).precision, 0.0);
    }
}
