use ndarray::Array2;

use super::DocumentRecord;
use crate::error::{Error, Result};
use crate::stats;

/// Tokens whose topic posterior has entropy at or above this are discarded.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = std::f64::consts::LN_2;

/// K x V matrix of `P(word | topic)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordMatrix(Array2<f64>);

impl TopicWordMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (k, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::invalid(format!("topic_word row {k} has negative entries")));
            }
            let total = row.sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "topic_word row {k} sums to {total}, expected 1"
                )));
            }
        }
        Ok(TopicWordMatrix(probs))
    }

    pub fn num_topics(&self) -> usize {
        self.0.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.0.ncols()
    }

    pub fn prob(&self, topic: usize, word: usize) -> f64 {
        self.0[[topic, word]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenAssignment {
    pub token_index: usize,
    /// `None` when the token was discarded as ambiguous.
    pub assigned_topic: Option<usize>,
    pub posterior: Vec<f64>,
}

impl TokenAssignment {
    pub fn entropy(&self) -> f64 {
        stats::entropy(&self.posterior)
    }
}

/// Assign each token to its most probable topic given the document mixture
/// and write the kept counts back into `doc.topic_counts`.
pub fn assign_tokens(
    doc: &mut DocumentRecord,
    topic_word: &TopicWordMatrix,
    tokens: &[usize],
    entropy_threshold: f64,
) -> Result<Vec<TokenAssignment>> {
    let k = topic_word.num_topics();
    let mixture = doc.raw_mixture.clone().ok_or_else(|| Error::InvalidRecord {
        doc_id: doc.doc_id.clone(),
        field: "raw_mixture".into(),
        reason: "required for token assignment".into(),
    })?;
    if mixture.len() != k {
        return Err(Error::InvalidRecord {
            doc_id: doc.doc_id.clone(),
            field: "raw_mixture".into(),
            reason: format!("length {} does not match {k} topics", mixture.len()),
        });
    }
    let mut counts = vec![0u64; k];
    let mut out = Vec::with_capacity(tokens.len());
    for (i, &w) in tokens.iter().enumerate() {
        if w >= topic_word.vocab_size() {
            return Err(Error::InvalidRecord {
                doc_id: doc.doc_id.clone(),
                field: "tokens".into(),
                reason: format!("word index {w} outside vocabulary of {}", topic_word.vocab_size()),
            });
        }
        let mut post: Vec<f64> = (0..k).map(|t| topic_word.prob(t, w) * mixture[t]).collect();
        let total: f64 = post.iter().sum();
        if total > 0.0 {
            post.iter_mut().for_each(|p| *p /= total);
        } else {
            post.iter_mut().for_each(|p| *p = 1.0 / k as f64);
        }
        let entropy = stats::entropy(&post);
        let assigned_topic = if total > 0.0 && entropy < entropy_threshold {
            let best = argmax(&post);
            counts[best] += 1;
            Some(best)
        } else {
            None
        };
        out.push(TokenAssignment {
            token_index: i,
            assigned_topic,
            posterior: post,
        });
    }
    doc.topic_counts = counts;
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
