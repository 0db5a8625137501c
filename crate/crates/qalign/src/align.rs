//! Cosine-similarity alignment: the pairwise similarity matrix, argmax
//! mapping selection with a lowest-index tie-break, and score
//! post-processing (min-max rescaling, probability clamping).

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Norms below this are treated as zero vectors.
const NORM_FLOOR: f64 = 1e-12;

/// A cosine value plus a degeneracy marker for zero-norm operands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f32,
    /// True when either operand had (near-)zero norm and the value was
    /// defined to 0 instead of NaN.
    pub degenerate: bool,
}

/// Cosine similarity of two equal-length vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<Cosine> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "cosine",
            format!("{} values", a.len()),
            format!("{} values", b.len()),
        ));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0) as f32,
        degenerate: false,
    })
}

/// Row-major `N_L x N_M` matrix of cosine similarities in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n_left: usize,
    n_right: usize,
    values: Vec<f32>,
    degenerate_pairs: Vec<(usize, usize)>,
}

impl SimilarityMatrix {
    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n_right + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_right..(i + 1) * self.n_right]
    }

    /// Pairs whose value was forced to 0 because an operand had zero norm.
    pub fn degenerate_pairs(&self) -> &[(usize, usize)] {
        &self.degenerate_pairs
    }
}

/// All-pairs cosine similarity between the rows of two embedding matrices
/// with a shared column count. Rows are computed in parallel when
/// `QALIGN_THREADS` (or the host) allows; assembly order is fixed, so the
/// result is identical to the sequential one.
pub fn similarity_matrix(
    e_left: &DenseMatrix,
    e_right: &DenseMatrix,
) -> Result<SimilarityMatrix> {
    if e_left.cols() != e_right.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("{}x{}", e_left.rows(), e_left.cols()),
            format!("{}x{}", e_right.rows(), e_right.cols()),
        ));
    }
    let (n_left, n_right) = (e_left.rows(), e_right.rows());

    let compute_row = |i: usize, out: &mut [f32], degenerate: &mut Vec<(usize, usize)>| {
        let left = e_left.row(i);
        for (j, slot) in out.iter_mut().enumerate() {
            let c = cosine(left, e_right.row(j)).expect("equal cols checked");
            *slot = c.value;
            if c.degenerate {
                degenerate.push((i, j));
            }
        }
    };

    let threads = crate::worker_threads().min(n_left.max(1));
    let mut values = vec![0.0f32; n_left * n_right];
    let mut degenerate_pairs = Vec::new();
    if threads <= 1 || n_left * n_right < 4096 {
        for i in 0..n_left {
            compute_row(
                i,
                &mut values[i * n_right..(i + 1) * n_right],
                &mut degenerate_pairs,
            );
        }
    } else {
        let chunk_rows = n_left.div_ceil(threads);
        let mut chunks: Vec<(usize, &mut [f32])> = Vec::new();
        let mut rest = values.as_mut_slice();
        let mut start = 0;
        while !rest.is_empty() {
            let take = (chunk_rows * n_right).min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            chunks.push((start, head));
            start += chunk_rows;
            rest = tail;
        }
        let degenerate_per_chunk: Vec<Vec<(usize, usize)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|(row0, slice)| {
                    scope.spawn(move || {
                        let mut degenerate = Vec::new();
                        for (k, out) in slice.chunks_mut(n_right).enumerate() {
                            compute_row(row0 + k, out, &mut degenerate);
                        }
                        degenerate
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for mut d in degenerate_per_chunk {
            degenerate_pairs.append(&mut d);
        }
    }

    Ok(SimilarityMatrix {
        n_left,
        n_right,
        values,
        degenerate_pairs,
    })
}

/// One selected alignment: left row, winning right index, raw cosine score,
/// and a `[0, 1]` probability.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Mapping {
    pub left_index: usize,
    pub right_index: usize,
    pub score: f32,
    pub probability: f32,
}

/// How raw argmax scores become probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilityMode {
    /// Rescale against the population of winning scores when one exists
    /// (two or more non-identical rows), otherwise fall back to the affine
    /// map. Raw cosine scores run high; rescaling spreads them over `[0, 1]`.
    Auto,
    /// `(score + 1) / 2`, clamped.
    Affine,
    /// Min-max rescale of the winning scores.
    MinMaxPopulation,
}

/// Argmax selection with [`ProbabilityMode::Auto`].
pub fn best_matches(s: &SimilarityMatrix) -> Result<Vec<Mapping>> {
    best_matches_with(s, ProbabilityMode::Auto)
}

/// One mapping per left row: the smallest right index attaining the row
/// maximum, its score, and a probability under the chosen mode.
pub fn best_matches_with(s: &SimilarityMatrix, mode: ProbabilityMode) -> Result<Vec<Mapping>> {
    if s.n_right == 0 {
        return Err(Error::Empty { op: "best_matches" });
    }
    let mut picks = Vec::with_capacity(s.n_left);
    for i in 0..s.n_left {
        let row = s.row(i);
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = j;
            }
        }
        picks.push((i, best, row[best]));
    }

    let scores: Vec<f32> = picks.iter().map(|(_, _, s)| *s).collect();
    let min = scores.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let use_population = match mode {
        ProbabilityMode::Affine => false,
        ProbabilityMode::MinMaxPopulation => true,
        ProbabilityMode::Auto => scores.len() >= 2 && max > min,
    };
    let probabilities = if use_population {
        min_max_rescale(&scores)?
    } else {
        scores
            .iter()
            .map(|s| ((s + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect()
    };

    Ok(picks
        .into_iter()
        .zip(probabilities)
        .map(|((left_index, right_index, score), probability)| Mapping {
            left_index,
            right_index,
            score,
            probability: probability.clamp(0.0, 1.0),
        })
        .collect())
}

/// `(x - min) / (max - min)` per element; a constant vector maps to all
/// zeros. Monotone, so order statistics survive.
pub fn min_max_rescale(scores: &[f32]) -> Result<Vec<f32>> {
    if scores.is_empty() {
        return Err(Error::Empty {
            op: "min_max_rescale",
        });
    }
    let min = scores.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::domain("min_max_rescale", "non-finite score"));
    }
    if max == min {
        return Ok(vec![0.0; scores.len()]);
    }
    let span = (max - min) as f64;
    Ok(scores
        .iter()
        .map(|x| (((x - min) as f64 / span) as f32).clamp(0.0, 1.0))
        .collect())
}

/// Fraction of left rows whose winning right index agrees between two
/// mapping sets. The quality signal used by configuration search.
pub fn agreement_rate(reference: &[Mapping], candidate: &[Mapping]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(Error::shape(
            "agreement_rate",
            format!("{} mappings", reference.len()),
            format!("{} mappings", candidate.len()),
        ));
    }
    if reference.is_empty() {
        return Err(Error::Empty {
            op: "agreement_rate",
        });
    }
    let same = reference
        .iter()
        .zip(candidate)
        .filter(|(a, b)| a.right_index == b.right_index)
        .count();
    Ok(same as f64 / reference.len() as f64)
}
