//! Segmentation quality metrics: frame accuracy, segmental IoU, normalized
//! edit score, and F1 at an IoU threshold.
//!
//! The segment-level metrics share one matching pass: both label streams are
//! run-length decomposed, background runs are dropped, and each predicted
//! segment is greedily paired with a same-class ground-truth segment in order
//! of descending temporal intersection (ties: earlier predicted start, then
//! earlier ground-truth start), each ground-truth segment being used at most
//! once. Degenerate denominators (no foreground predictions, or no
//! foreground ground truth) yield 0 with an explicit flag instead of NaN.

use crate::segment::{collapse_to_transcript, segments_of, Segment};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("label streams differ in length: pred {pred}, gt {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("label streams are empty")]
    Empty,
}

/// Fraction of frames whose predicted label equals the ground truth.
pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64, MetricError> {
    check_streams(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn check_streams(pred: &[usize], gt: &[usize]) -> Result<(), MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn intersection(a: &Segment, b: &Segment) -> usize {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    hi.saturating_sub(lo)
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = intersection(a, b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Greedy same-class matching between predicted and ground-truth segments.
struct Matching {
    pred: Vec<Segment>,
    gt: Vec<Segment>,
    /// For each predicted segment, the matched ground-truth index.
    pred_match: Vec<Option<usize>>,
    gt_matched: Vec<bool>,
}

fn match_segments(pred_labels: &[usize], gt_labels: &[usize], background: &[usize]) -> Matching {
    let keep = |s: &Segment| !background.contains(&s.label);
    let pred: Vec<Segment> = segments_of(pred_labels).into_iter().filter(|s| keep(s)).collect();
    let gt: Vec<Segment> = segments_of(gt_labels).into_iter().filter(|s| keep(s)).collect();

    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.label == g.label {
                let inter = intersection(p, g);
                if inter > 0 {
                    candidates.push((i, j, inter));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.cmp(&a.2)
            .then(pred[a.0].start.cmp(&pred[b.0].start))
            .then(gt[a.1].start.cmp(&gt[b.1].start))
    });

    let mut pred_match = vec![None; pred.len()];
    let mut gt_matched = vec![false; gt.len()];
    for (i, j, _) in candidates {
        if pred_match[i].is_none() && !gt_matched[j] {
            pred_match[i] = Some(j);
            gt_matched[j] = true;
        }
    }
    Matching { pred, gt, pred_match, gt_matched }
}

/// Mean IoU over non-background predicted segments; unmatched predictions
/// score zero. The flag is set when there are no foreground predictions.
pub fn segmental_iou(
    pred: &[usize],
    gt: &[usize],
    background: &[usize],
) -> Result<(f64, bool), MetricError> {
    check_streams(pred, gt)?;
    let m = match_segments(pred, gt, background);
    if m.pred.is_empty() {
        return Ok((0.0, true));
    }
    let total: f64 = m
        .pred
        .iter()
        .zip(&m.pred_match)
        .map(|(p, matched)| matched.map_or(0.0, |j| iou(p, &m.gt[j])))
        .sum();
    Ok((total / m.pred.len() as f64, false))
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitute = prev + usize::from(ca != cb);
            prev = row[j + 1];
            row[j + 1] = substitute.min(prev + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

/// Normalized Levenshtein similarity between transcripts on a 0–100 scale;
/// 100 when both are empty.
pub fn edit_score(pred_transcript: &[usize], gt_transcript: &[usize]) -> f64 {
    let denom = pred_transcript.len().max(gt_transcript.len());
    if denom == 0 {
        return 100.0;
    }
    let dist = levenshtein(pred_transcript, gt_transcript);
    100.0 * (1.0 - dist as f64 / denom as f64)
}

/// Per-class true/false positive and false negative counts at a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCounts {
    pub class: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1: f64,
}

/// Unweighted mean F1 over classes present in the foreground ground truth.
///
/// A matched predicted segment with IoU at or above the threshold is a true
/// positive; unmatched or sub-threshold predictions are false positives;
/// unmatched ground-truth segments are false negatives. Classes with no true
/// positives contribute zero. The flag is set when the ground truth has no
/// foreground segments.
pub fn f1_at_threshold(
    pred: &[usize],
    gt: &[usize],
    threshold: f64,
    background: &[usize],
) -> Result<(f64, Vec<ClassCounts>, bool), MetricError> {
    check_streams(pred, gt)?;
    let m = match_segments(pred, gt, background);

    let mut classes: Vec<usize> = m.gt.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Ok((0.0, Vec::new(), true));
    }

    let mut per_class = Vec::with_capacity(classes.len());
    let mut f1_sum = 0.0;
    for &class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (p, matched) in m.pred.iter().zip(&m.pred_match) {
            if p.label != class {
                continue;
            }
            match matched {
                Some(j) if iou(p, &m.gt[*j]) >= threshold => tp += 1,
                _ => fp += 1,
            }
        }
        let fn_count = m
            .gt
            .iter()
            .zip(&m.gt_matched)
            .filter(|(g, matched)| g.label == class && !**matched)
            .count();
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / (tp + fn_count) as f64;
            2.0 * precision * recall / (precision + recall)
        };
        f1_sum += f1;
        per_class.push(ClassCounts {
            class,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_count,
            f1,
        });
    }
    Ok((f1_sum / classes.len() as f64, per_class, false))
}

/// All four metrics for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub acc: f64,
    pub iou: f64,
    pub edit: f64,
    pub f1_at_50: f64,
    pub per_class: Vec<ClassCounts>,
    /// No foreground predicted segments.
    pub iou_degenerate: bool,
    /// No foreground ground-truth segments.
    pub f1_degenerate: bool,
}

/// Computes the full report; transcripts for the edit score are derived by
/// run-length collapse with background runs dropped.
pub fn evaluate(
    pred: &[usize],
    gt: &[usize],
    background: &[usize],
) -> Result<MetricReport, MetricError> {
    let acc = frame_accuracy(pred, gt)?;
    let (iou, iou_degenerate) = segmental_iou(pred, gt, background)?;
    let (f1_at_50, per_class, f1_degenerate) = f1_at_threshold(pred, gt, 0.5, background)?;
    let drop_bg = |labels: &[usize]| -> Vec<usize> {
        collapse_to_transcript(labels)
            .into_iter()
            .filter(|l| !background.contains(l))
            .collect()
    };
    let edit = edit_score(&drop_bg(pred), &drop_bg(gt));
    Ok(MetricReport { acc, iou, edit, f1_at_50, per_class, iou_degenerate, f1_degenerate })
}
