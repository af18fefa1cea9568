//! Retrieval metrics (recall@k, median rank) and the evaluation protocols
//! built on them: text→video, video→text and 5-way multiple choice.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index;

use crate::data::{Caption, Pair, VideoSample};
use crate::error::{Error, Result};
use crate::init;
use crate::model::MeeParams;
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const MULTIPLE_CHOICE_CANDIDATES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub recall_at: BTreeMap<usize, f64>,
    /// Lower median of the per-query ranks (1-based).
    pub median_rank: usize,
    pub n_queries: usize,
    /// Per-query rank of the ground-truth candidate.
    pub ranks: Vec<usize>,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipleChoiceReport {
    pub accuracy: f64,
    pub correct: usize,
    pub n_items: usize,
}

/// Rank of candidate `gt` in `row`: one plus the number of candidates scoring
/// strictly higher, plus earlier-indexed candidates with an equal score.
pub fn rank_of<T: Real>(row: &[T], gt: usize) -> usize {
    let target = row[gt];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < gt))
        .count()
}

/// Ranks every query row of `scores` (`[Q × C]`) against its ground-truth column.
pub fn rank_metrics<T: Real>(scores: &Tensor<T>, ground_truth: &[usize], ks: &[usize]) -> Result<RetrievalReport> {
    let (q, c) = (scores.rows(), scores.cols());
    if ground_truth.len() != q {
        return Err(Error::BatchMismatch {
            captions: q,
            videos: ground_truth.len(),
        });
    }
    if q == 0 {
        return Err(Error::EmptyPool);
    }
    let mut ranks = Vec::with_capacity(q);
    for (i, &gt) in ground_truth.iter().enumerate() {
        if gt >= c {
            return Err(Error::IndexOutOfRange {
                index: gt,
                candidates: c,
            });
        }
        ranks.push(rank_of(scores.row(i), gt));
    }
    let recall_at = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / q as f64))
        .collect();
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    Ok(RetrievalReport {
        recall_at,
        median_rank: sorted[(q - 1) / 2],
        n_queries: q,
        ranks,
    })
}

/// Indices of an evaluation pool drawn without replacement by `seed`.
pub fn sample_pool(available: usize, n_pool: usize, seed: u64) -> Result<Vec<usize>> {
    if n_pool == 0 || available == 0 {
        return Err(Error::EmptyPool);
    }
    if n_pool > available {
        return Err(Error::PoolTooLarge {
            requested: n_pool,
            available,
        });
    }
    let mut idx = index::sample(&mut init::rng(seed), available, n_pool).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Caption×video scores of a seeded pool; the ground truth lies on the diagonal.
pub fn pool_scores<T: Real>(params: &MeeParams<T>, pairs: &[Pair<T>], n_pool: usize, seed: u64) -> Result<Tensor<T>> {
    let idx = sample_pool(pairs.len(), n_pool, seed)?;
    let captions: Vec<Caption<T>> = idx.iter().map(|&i| pairs[i].caption.clone()).collect();
    let videos: Vec<VideoSample<T>> = idx.iter().map(|&i| pairs[i].video.clone()).collect();
    params.score_matrix(&captions, &videos)
}

fn diagonal(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn text_to_video_eval<T: Real>(
    params: &MeeParams<T>,
    pairs: &[Pair<T>],
    n_pool: usize,
    seed: u64,
) -> Result<RetrievalReport> {
    let s = pool_scores(params, pairs, n_pool, seed)?;
    rank_metrics(&s, &diagonal(s.rows()), &DEFAULT_KS)
}

pub fn video_to_text_eval<T: Real>(
    params: &MeeParams<T>,
    pairs: &[Pair<T>],
    n_pool: usize,
    seed: u64,
) -> Result<RetrievalReport> {
    let s = pool_scores(params, pairs, n_pool, seed)?.transpose()?;
    rank_metrics(&s, &diagonal(s.rows()), &DEFAULT_KS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultipleChoiceItem<T> {
    pub video: VideoSample<T>,
    pub candidates: Vec<Caption<T>>,
    pub answer: usize,
}

/// Index of the highest score; the lowest index wins ties.
pub fn argmax_first<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of argmax predictions over per-item candidate scores.
pub fn multiple_choice_accuracy<T: Real>(scores: &[Vec<T>], answers: &[usize]) -> Result<MultipleChoiceReport> {
    if scores.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut correct = 0;
    for (row, &answer) in scores.iter().zip(answers) {
        if row.len() != MULTIPLE_CHOICE_CANDIDATES {
            return Err(Error::CandidateCount(row.len()));
        }
        if answer >= row.len() {
            return Err(Error::IndexOutOfRange {
                index: answer,
                candidates: row.len(),
            });
        }
        if argmax_first(row) == answer {
            correct += 1;
        }
    }
    Ok(MultipleChoiceReport {
        accuracy: correct as f64 / scores.len() as f64,
        correct,
        n_items: scores.len(),
    })
}

pub fn multiple_choice_eval<T: Real>(params: &MeeParams<T>, items: &[MultipleChoiceItem<T>]) -> Result<MultipleChoiceReport> {
    let mut scores = Vec::with_capacity(items.len());
    for item in items {
        if item.candidates.len() != MULTIPLE_CHOICE_CANDIDATES {
            return Err(Error::CandidateCount(item.candidates.len()));
        }
        let s = params.score_matrix(&item.candidates, core::slice::from_ref(&item.video))?;
        scores.push(s.into_data());
    }
    let answers: Vec<usize> = items.iter().map(|i| i.answer).collect();
    multiple_choice_accuracy(&scores, &answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn matrix(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn dominant_diagonal() {
        let mut s = Tensor::<f64>::zeros(&[10, 10]);
        for i in 0..10 {
            s.set2(i, i, 1.0);
        }
        let r = rank_metrics(&s, &diagonal(10), &DEFAULT_KS).unwrap();
        assert_eq!(r.recall(1), Some(1.0));
        assert_eq!(r.median_rank, 1);
    }

    #[test]
    fn reversed_scores_put_truth_last() {
        let s = matrix(&[&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0]]);
        let r = rank_metrics(&s, &[2, 2, 2], &DEFAULT_KS).unwrap();
        assert_eq!(r.recall(1), Some(0.0));
        assert_eq!(r.median_rank, 3);
        assert_eq!(r.recall(5), Some(1.0));
    }

    #[test]
    fn ties_favor_earlier_candidates() {
        let s = matrix(&[&[1.0, 1.0, 1.0]]);
        assert_eq!(rank_metrics(&s, &[0], &[1]).unwrap().ranks, vec![1]);
        assert_eq!(rank_metrics(&s, &[2], &[1]).unwrap().ranks, vec![3]);
    }

    #[test]
    fn lower_median_for_even_counts() {
        let s = matrix(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let r = rank_metrics(&s, &[0, 1], &DEFAULT_KS).unwrap();
        assert_eq!(r.ranks, vec![1, 2]);
        assert_eq!(r.median_rank, 1);
    }

    #[test]
    fn out_of_range_ground_truth() {
        let s = matrix(&[&[1.0, 0.0]]);
        assert!(matches!(
            rank_metrics(&s, &[2], &DEFAULT_KS),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn multiple_choice_examples() {
        let best = vec![vec![0.9, 0.1, 0.2, 0.3, 0.0]; 4];
        assert_eq!(multiple_choice_accuracy(&best, &[0; 4]).unwrap().accuracy, 1.0);
        assert_eq!(multiple_choice_accuracy(&best, &[4; 4]).unwrap().accuracy, 0.0);
        let three = vec![
            vec![0.1, 0.5, 0.2, 0.0, 0.0],
            vec![0.3, 0.3, 0.2, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.7],
        ];
        // Item 1 ties between candidates 0 and 1; the answer 1 loses the tie.
        let r = multiple_choice_accuracy(&three, &[1, 1, 4]).unwrap();
        assert_eq!(r.correct, 2);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            multiple_choice_accuracy(&[vec![0.0; 4]], &[0]),
            Err(Error::CandidateCount(4))
        ));
    }

    #[test]
    fn pool_sampling() {
        assert_eq!(sample_pool(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_pool(50, 10, 3).unwrap(), sample_pool(50, 10, 3).unwrap());
        assert!(matches!(sample_pool(5, 6, 0), Err(Error::PoolTooLarge { .. })));
        assert!(matches!(sample_pool(5, 0, 0), Err(Error::EmptyPool)));
    }
}
