//! Reciprocal rank fusion.
//!
//! Each retrieval contributes `1 / (rank + k)` to every chunk it lists, with
//! 1-based ranks. Contributions for the same chunk accumulate across lists and
//! the chunks are then reranked by the accumulated score.

use std::collections::HashMap;

use crate::model::{Contributor, FusedChunk, FusionResult, RankedRetrieval};

pub const DEFAULT_K: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("rank must be at least 1, got {0}")]
    RankBelowOne(usize),
    #[error("smoothing factor k must be a non-negative real, got {0}")]
    InvalidK(f64),
    #[error("nothing to fuse: no retrievals given")]
    NoRetrievals,
    #[error("input retrieval violates its ordering contract: {0}")]
    InputIntegrity(String),
}

fn check_k(k: f64) -> Result<(), FusionError> {
    if k.is_finite() && k >= 0.0 {
        Ok(())
    } else {
        Err(FusionError::InvalidK(k))
    }
}

/// `1 / (rank + k)`.
pub fn rrf_score(rank: usize, k: f64) -> Result<f64, FusionError> {
    if rank < 1 {
        return Err(FusionError::RankBelowOne(rank));
    }
    check_k(k)?;
    Ok(1.0 / (rank as f64 + k))
}

/// Fuses retrievals into one list ordered by descending accumulated score,
/// ties ascending by chunk id.
///
/// Inputs are checked, never re-sorted: an unsorted list or a duplicated chunk
/// inside one list is an upstream bug and is reported as such.
///
/// Contributors are kept sorted by `(rank, query_text)` and each score is summed
/// in that order, so the output is bit-for-bit independent of the order of
/// `retrievals`.
pub fn fuse(retrievals: &[RankedRetrieval], k: f64) -> Result<FusionResult, FusionError> {
    check_k(k)?;
    if retrievals.is_empty() {
        return Err(FusionError::NoRetrievals);
    }
    for retrieval in retrievals {
        if let Some(problem) = retrieval.violations().into_iter().next() {
            return Err(FusionError::InputIntegrity(problem));
        }
    }

    let mut by_chunk: HashMap<&str, Vec<Contributor>> = HashMap::new();
    for retrieval in retrievals {
        for (i, entry) in retrieval.entries.iter().enumerate() {
            by_chunk
                .entry(entry.chunk_id.as_str())
                .or_default()
                .push(Contributor {
                    rank: i + 1,
                    query_text: retrieval.query_text.clone(),
                });
        }
    }

    let mut entries: Vec<FusedChunk> = by_chunk
        .into_iter()
        .map(|(chunk_id, mut contributors)| {
            contributors.sort();
            let rrf_score = contributors
                .iter()
                .map(|c| 1.0 / (c.rank as f64 + k))
                .sum();
            FusedChunk {
                chunk_id: chunk_id.to_string(),
                rrf_score,
                contributors,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.rrf_score
            .total_cmp(&a.rrf_score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });

    Ok(FusionResult { entries, k_used: k })
}

/// The first `top_m` chunk ids in fused order.
pub fn select_evidence(fusion: &FusionResult, top_m: usize) -> Vec<String> {
    fusion
        .entries
        .iter()
        .take(top_m)
        .map(|e| e.chunk_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RetrievedChunk;

    fn list(query: &str, ids: &[&str]) -> RankedRetrieval {
        RankedRetrieval {
            query_text: query.to_string(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RetrievedChunk {
                    chunk_id: id.to_string(),
                    distance: i as f64 * 0.25,
                })
                .collect(),
        }
    }

    fn scores(result: &FusionResult) -> Vec<(&str, f64)> {
        result
            .entries
            .iter()
            .map(|e| (e.chunk_id.as_str(), e.rrf_score))
            .collect()
    }

    #[test]
    fn point_values() {
        assert_eq!(rrf_score(1, 0.0).unwrap(), 1.0);
        assert!((rrf_score(1, 60.0).unwrap() - 0.016_393_442_622_950_82).abs() < 1e-12);
        assert!((rrf_score(3, 1.0).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(rrf_score(0, 1.0), Err(FusionError::RankBelowOne(0)));
        assert_eq!(rrf_score(1, -1.0), Err(FusionError::InvalidK(-1.0)));
        assert!(matches!(rrf_score(1, f64::NAN), Err(FusionError::InvalidK(_))));
    }

    #[test]
    fn single_list_keeps_order() {
        let r = fuse(&[list("q", &["A", "B", "C"])], 0.0).unwrap();
        let s = scores(&r);
        assert_eq!(s[0], ("A", 1.0));
        assert_eq!(s[1], ("B", 0.5));
        assert_eq!(s[2].0, "C");
        assert!((s[2].1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_lists_k60() {
        let r = fuse(&[list("q1", &["A", "B"]), list("q2", &["A", "C"])], 60.0).unwrap();
        let s = scores(&r);
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), ["A", "B", "C"]);
        assert!((s[0].1 - 2.0 / 61.0).abs() < 1e-12);
        assert!((s[1].1 - 1.0 / 62.0).abs() < 1e-12);
        assert_eq!(s[1].1, s[2].1);
        assert_eq!(r.k_used, 60.0);
        assert_eq!(
            r.entries[0].contributors,
            vec![
                Contributor { rank: 1, query_text: "q1".into() },
                Contributor { rank: 1, query_text: "q2".into() },
            ]
        );
    }

    #[test]
    fn tied_accumulations_break_by_id() {
        let r = fuse(&[list("q1", &["A", "B", "C"]), list("q2", &["B", "A"])], 1.0).unwrap();
        let s = scores(&r);
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), ["A", "B", "C"]);
        assert!((s[0].1 - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(s[0].1, s[1].1);
        assert!((s[2].1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn evidence_selection() {
        let r = fuse(&[list("q1", &["A", "B", "C"]), list("q2", &["B", "A"])], 1.0).unwrap();
        assert_eq!(select_evidence(&r, 2), ["A", "B"]);
        assert_eq!(select_evidence(&r, 10), ["A", "B", "C"]);
        assert_eq!(select_evidence(&r, 1), ["A"]);
    }

    #[test]
    fn unsorted_input_fails_fast() {
        let mut bad = list("q", &["A", "B"]);
        bad.entries[0].distance = 0.9;
        assert!(matches!(fuse(&[bad], 60.0), Err(FusionError::InputIntegrity(_))));
    }

    #[test]
    fn duplicate_in_one_list_fails() {
        let mut bad = list("q", &["A", "B"]);
        bad.entries[1].chunk_id = "A".into();
        assert!(matches!(fuse(&[bad], 60.0), Err(FusionError::InputIntegrity(_))));
    }

    #[test]
    fn empty_input_and_bad_k() {
        assert_eq!(fuse(&[], 60.0), Err(FusionError::NoRetrievals));
        assert_eq!(fuse(&[list("q", &["A"])], -0.5), Err(FusionError::InvalidK(-0.5)));
    }

    #[test]
    fn empty_lists_fuse_to_empty_result() {
        let r = fuse(&[list("q1", &[]), list("q2", &[])], 60.0).unwrap();
        assert!(r.entries.is_empty());
    }

    #[test]
    fn larger_k_flips_breadth_against_depth() {
        // X sits at rank 10 in two lists, Y tops a single list.
        let padded = |prefix: &str| -> Vec<String> {
            let mut v: Vec<String> = (0..9).map(|i| format!("{prefix}{i}")).collect();
            v.push("X".into());
            v
        };
        let (first, third) = (padded("f"), padded("g"));
        let first: Vec<&str> = first.iter().map(String::as_str).collect();
        let third: Vec<&str> = third.iter().map(String::as_str).collect();
        let lists = [list("a", &first), list("b", &["Y"]), list("c", &third)];
        let position = |r: &FusionResult, id: &str| r.chunk_ids().position(|c| c == id).unwrap();

        let sharp = fuse(&lists, 0.0).unwrap();
        assert!(position(&sharp, "Y") < position(&sharp, "X"));
        let smooth = fuse(&lists, 60.0).unwrap();
        assert!(position(&smooth, "X") < position(&smooth, "Y"));
    }
}
