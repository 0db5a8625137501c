//! Evaluation metrics: EDRM (mean relative closeness on a bounded grading
//! scale), non-interpolated mean average precision, Spearman rank
//! correlation with tie handling, confusion-matrix classification metrics,
//! and a combined cross-entropy + MSE loss.

use std::collections::BTreeSet;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One hypothesis/reference pair on a bounded grading scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdrmRecord {
    pub hypothesis: f64,
    pub reference: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl EdrmRecord {
    /// Record on the default 0..5 grading scale.
    pub fn new(hypothesis: f64, reference: f64) -> Result<Self> {
        Self::with_scale(hypothesis, reference, 0.0, 5.0)
    }

    pub fn with_scale(
        hypothesis: f64,
        reference: f64,
        scale_min: f64,
        scale_max: f64,
    ) -> Result<Self> {
        if !(scale_min.is_finite() && scale_max.is_finite()) || scale_min >= scale_max {
            return Err(Error::domain(
                "EdrmRecord",
                format!("invalid scale [{scale_min}, {scale_max}]"),
            ));
        }
        for (label, v) in [("hypothesis", hypothesis), ("reference", reference)] {
            if !v.is_finite() || v < scale_min || v > scale_max {
                return Err(Error::domain(
                    "EdrmRecord",
                    format!("{label} {v} outside [{scale_min}, {scale_max}]"),
                ));
            }
        }
        Ok(Self {
            hypothesis,
            reference,
            scale_min,
            scale_max,
        })
    }
}

/// Micro-averaged `1 - d/dmax` over all records, where `d = |h - r|` and
/// `dmax` is the distance from the reference to the farther end of the
/// scale. Always lands in `[0, 1]`.
pub fn edrm(records: &[EdrmRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty { op: "edrm" });
    }
    let mut total = 0.0f64;
    for rec in records {
        let d = (rec.hypothesis - rec.reference).abs();
        let dmax = (rec.reference - rec.scale_min).max(rec.scale_max - rec.reference);
        total += if dmax == 0.0 {
            // unreachable for a non-degenerate scale; an exact hit scores 1
            if d == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - d / dmax
        };
    }
    Ok(total / records.len() as f64)
}

/// A query's ranked candidates (best first) and its set of relevant ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub id: String,
    pub ranked: Vec<String>,
    pub relevant: BTreeSet<String>,
}

impl RankedQuery {
    pub fn new(
        id: impl Into<String>,
        ranked: Vec<String>,
        relevant: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let id = id.into();
        if ranked.is_empty() {
            return Err(Error::domain(
                "RankedQuery",
                format!("query `{id}`: ranked list is empty"),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &ranked {
            if !seen.insert(c.as_str()) {
                return Err(Error::domain(
                    "RankedQuery",
                    format!("query `{id}`: duplicate candidate `{c}`"),
                ));
            }
        }
        Ok(Self {
            id,
            ranked,
            relevant: relevant.into_iter().collect(),
        })
    }
}

/// Non-interpolated mean average precision: per query, the mean over its
/// relevant items of precision at that item's rank (relevant items missing
/// from the ranking contribute zero), then the mean over queries.
pub fn mean_average_precision(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty {
            op: "mean_average_precision",
        });
    }
    let mut total = 0.0f64;
    for q in queries {
        if q.relevant.is_empty() {
            return Err(Error::EmptyRelevantSet {
                query: q.id.clone(),
            });
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0f64;
        for (pos, cand) in q.ranked.iter().enumerate() {
            if q.relevant.contains(cand) {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        total += precision_sum / q.relevant.len() as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Correlation estimate plus its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
}

/// Average ranks with ties sharing their mean rank (1-based).
pub(crate) fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0f64; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let mean = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks, with a
/// two-sided p-value from the `t = rho * sqrt((n-2)/(1-rho^2))`
/// approximation on `n - 2` degrees of freedom.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "spearman_rho",
            format!("{} values", x.len()),
            format!("{} values", y.len()),
        ));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::domain(
            "spearman_rho",
            format!("need at least 3 pairs, got {n}"),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n + 1) as f64 / 2.0;
    let mut cov = 0.0f64;
    let mut var_x = 0.0f64;
    let mut var_y = 0.0f64;
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        cov += da * db;
        var_x += da * da;
        var_y += db * db;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::UndefinedCorrelation {
            msg: "an input vector is constant".into(),
        });
    }
    let rho = cov / (var_x * var_y).sqrt();

    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2) as f64 / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("n >= 3");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(SpearmanResult { rho, p_value })
}

/// Confusion-matrix summary of a binary prediction run. `degenerate` is set
/// when a zero denominator forced precision or recall to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

/// Accuracy, precision, recall, and F1 from aligned binary vectors.
pub fn classification_metrics(pred: &[bool], gold: &[bool]) -> Result<ClassificationReport> {
    if pred.len() != gold.len() {
        return Err(Error::shape(
            "classification_metrics",
            format!("{} predictions", pred.len()),
            format!("{} gold labels", gold.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty {
            op: "classification_metrics",
        });
    }
    let (mut tp, mut fp, mut fne, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| -> f64 {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (tp + tn) as f64 / pred.len() as f64;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationReport {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// `alpha * cross_entropy + beta * mse`, where the MSE term compares the
/// predicted class index (argmax, lowest index on ties) with the gold index
/// on the grading scale. Each probability row must sum to 1 within 1e-6.
pub fn combined_loss(
    pred_class_probs: &[Vec<f64>],
    gold_labels: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if pred_class_probs.len() != gold_labels.len() {
        return Err(Error::shape(
            "combined_loss",
            format!("{} probability rows", pred_class_probs.len()),
            format!("{} labels", gold_labels.len()),
        ));
    }
    if pred_class_probs.is_empty() {
        return Err(Error::Empty { op: "combined_loss" });
    }
    if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::domain(
            "combined_loss",
            format!("weights must be >= 0, got alpha={alpha} beta={beta}"),
        ));
    }
    let n_classes = pred_class_probs[0].len();
    let mut ce = 0.0f64;
    let mut mse = 0.0f64;
    for (row, gold) in pred_class_probs.iter().zip(gold_labels) {
        if row.len() != n_classes || n_classes == 0 {
            return Err(Error::domain(
                "combined_loss",
                "probability rows must share a nonzero class count".to_string(),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain(
                "combined_loss",
                format!("row is not a probability distribution (sum {sum})"),
            ));
        }
        if *gold >= n_classes {
            return Err(Error::domain(
                "combined_loss",
                format!("gold label {gold} outside {n_classes} classes"),
            ));
        }
        ce += -row[*gold].ln();
        let mut argmax = 0usize;
        for (j, p) in row.iter().enumerate().skip(1) {
            if *p > row[argmax] {
                argmax = j;
            }
        }
        let d = argmax as f64 - *gold as f64;
        mse += d * d;
    }
    let n = pred_class_probs.len() as f64;
    Ok(alpha * (ce / n) + beta * (mse / n))
}
