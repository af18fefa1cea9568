use mee_core::eval::{MultipleChoiceReport, RetrievalReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalJson {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: usize,
    pub n: usize,
}

impl RetrievalJson {
    /// R@1 + R@5 + R@10, used for model selection.
    pub fn rsum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

impl From<&RetrievalReport> for RetrievalJson {
    fn from(r: &RetrievalReport) -> Self {
        let at = |k| r.recall(k).unwrap_or(f64::NAN);
        Self {
            r1: at(1),
            r5: at(5),
            r10: at(10),
            medr: r.median_rank,
            n: r.n_queries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipleChoiceJson {
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
}

impl From<&MultipleChoiceReport> for MultipleChoiceJson {
    fn from(r: &MultipleChoiceReport) -> Self {
        Self {
            accuracy: r.accuracy,
            correct: r.correct,
            n: r.n_items,
        }
    }
}
