//! 1-nearest-neighbor classification and the accuracy metric.

use serde::{Deserialize, Serialize};

use crate::data_model::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Negated Euclidean distance to the chosen neighbor.
    pub confidence: Option<Vec<f64>>,
}

/// Euclidean 1-NN over columns. Ties go to the lowest training index.
pub fn nn_classify(train_features: &Matrix, train_labels: &[usize], query_features: &Matrix) -> Result<Prediction> {
    let n1 = train_features.ncols();
    if n1 == 0 {
        return Err(Error::data("1-NN needs at least one training sample"));
    }
    if train_labels.len() != n1 {
        return Err(Error::data(format!("{} training labels for {n1} samples", train_labels.len())));
    }
    if train_features.nrows() != query_features.nrows() {
        return Err(Error::data(format!(
            "embedding dimension mismatch: train {} vs query {}",
            train_features.nrows(),
            query_features.nrows()
        )));
    }
    let k = train_features.nrows();
    let mut labels = Vec::with_capacity(query_features.ncols());
    let mut confidence = Vec::with_capacity(query_features.ncols());
    for q in query_features.column_iter() {
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        for (i, t) in train_features.column_iter().enumerate() {
            let mut d = 0.0;
            for r in 0..k {
                let diff = q[r] - t[r];
                d += diff * diff;
            }
            if d < best {
                best = d;
                best_i = i;
            }
        }
        labels.push(train_labels[best_i]);
        confidence.push(-best.sqrt());
    }
    Ok(Prediction {
        labels,
        confidence: Some(confidence),
    })
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::data(format!(
            "accuracy: {} predictions vs {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::data("accuracy of an empty set"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}
