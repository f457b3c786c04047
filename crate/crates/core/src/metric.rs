//! Similarity calculator: cosine similarity between embeddings and mean aggregation.

use crate::error::{Error, Result};
use crate::model::EmbeddingVector;

/// Cosine similarity of two raw slices, clamped to `[-1, 1]`.
///
/// The dot product and both norms are accumulated in one pass in `f64`. The
/// expression is symmetric term by term, so swapping the arguments gives a
/// bit-identical result.
pub fn cosine_similarity_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Contract("cannot compare empty vectors".into()));
    }
    let (mut dot, mut norm_a, mut norm_b) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::DegenerateInput("non-finite embedding component".into()));
        }
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        if a.iter().all(|&x| x == 0.0) || b.iter().all(|&y| y == 0.0) {
            return Err(Error::DegenerateInput("cosine similarity of an all-zero vector".into()));
        }
        // Squares underflowed.
        return Ok(cosine_rescaled(a, b));
    }
    if !(dot.is_finite() && norm_a.is_finite() && norm_b.is_finite()) {
        return Ok(cosine_rescaled(a, b));
    }
    // sqrt(a)*sqrt(b) rather than sqrt(a*b): the product can overflow for large norms.
    let denom = norm_a.sqrt() * norm_b.sqrt();
    Ok((dot / denom).clamp(-1.0, 1.0))
}

// Over/underflow fallback: cosine is scale invariant, so divide each side by its max magnitude.
fn cosine_rescaled(a: &[f64], b: &[f64]) -> f64 {
    let max_a = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_b = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut dot, mut norm_a, mut norm_b) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x / max_a, y / max_b);
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    (dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Contract(format!("dimension mismatch: {} vs {}", a.dim, b.dim)));
    }
    cosine_similarity_slices(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
}

pub fn aggregate_scores(scores: &[f64], mode: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("cannot aggregate an empty score list".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
        return Err(Error::Contract(format!("score {bad} lies outside [-1, 1]")));
    }
    match mode {
        Aggregation::Mean => {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            // Rounding can push the mean a hair past the extremes.
            let (lo, hi) = scores
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
            Ok(mean.clamp(lo, hi))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec(), "test").unwrap()
    }

    #[test]
    fn identity_is_one() {
        let a = v(&[0.3, -2.0, 5.5]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_is_zero() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn hand_expanded_example() {
        // dot = 1*4 + 2*5 + 3*6 = 32; |a|^2 = 1+4+9 = 14; |b|^2 = 16+25+36 = 77
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.974632).abs() < 1e-6);
    }

    #[test]
    fn opposite_is_minus_one() {
        let a = [1.5, -0.25, 3.0];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(cosine_similarity(&v(&a), &v(&neg)).unwrap(), -1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])), Err(Error::Contract(_))));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 2.0]), &v(&[0.0, 0.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn huge_components_do_not_overflow() {
        let a = [1e200, 1e200];
        let got = cosine_similarity_slices(&a, &a).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
        let tiny = [1e-200, -1e-200];
        let got = cosine_similarity_slices(&tiny, &[1.0, 1.0]).unwrap();
        assert!(got.abs() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_scores(&[0.5], Aggregation::Mean).unwrap(), 0.5);
        assert!((aggregate_scores(&[0.6, 0.8], Aggregation::Mean).unwrap() - 0.7).abs() < 1e-15);
        let refs = [0.61, 0.72, 0.55, 0.8, 0.64];
        let mut total = 0.0;
        for s in refs {
            total += s;
        }
        let got = aggregate_scores(&refs, Aggregation::Mean).unwrap();
        assert!((got - total / 5.0).abs() < 1e-15);
        assert!(aggregate_scores(&[], Aggregation::Mean).is_err());
        assert!(aggregate_scores(&[1.5], Aggregation::Mean).is_err());
    }

    #[test]
    fn mean_of_equal_scores_is_exact() {
        let s = [0.1; 10];
        assert_eq!(aggregate_scores(&s, Aggregation::Mean).unwrap(), 0.1);
    }
}
