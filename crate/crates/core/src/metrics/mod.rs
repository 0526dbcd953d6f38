//! Branch fusion, ranking metrics, and report serialization.

mod regions;
mod report;

pub use regions::{median_nn_distance, radius_regions};
pub use report::{
    load_scores, save_scores, scores_from_bytes, scores_to_bytes, EvalMode, MetricsReport, SamplePrediction, SampleTruth,
};

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// `M_A = α·M^ra + (1−α)·M^r` and `ŷ = α·ŷ^ra + (1−α)·ŷ^r + max(M_A)`.
pub fn fuse(points_ra: &[f64], image_ra: f64, points_r: &[f64], image_r: f64, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("fusion weight α must lie in [0, 1], got {alpha}")));
    }
    if points_ra.len() != points_r.len() || points_ra.is_empty() {
        return Err(Error::shape(format!("branch maps of {} and {} points", points_ra.len(), points_r.len())));
    }
    let fused: Vec<f64> = points_ra.iter().zip(points_r).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let peak = fused.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((fused, alpha * image_ra + (1.0 - alpha) * image_r + peak))
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by score descending, ties by index ascending.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Mann–Whitney AUROC with ties counted one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes ({pos} positive, {neg} negative)")));
    }
    let order = ranked(scores);
    // Walk groups of tied scores from the top, counting negatives already passed.
    let mut wins = 0.0;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        let (mut p, mut n) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == s {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins += p as f64 * ((neg - neg_above - n) as f64 + 0.5 * n as f64);
        neg_above += n;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// `Σ_k (R_k − R_{k−1})·P_k` over the ranked list.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranked(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// Per-region overlap integrated over FPR ∈ [0, `fpr_limit`], normalized by the limit.
///
/// Thresholds sweep every distinct score. Left of the first achieved FPR the
/// curve is held at its first overlap value, so constant scores yield the
/// single-threshold mean overlap.
pub fn pro(scores: &[f64], labels: &[bool], regions: &[Vec<usize>], fpr_limit: f64) -> Result<f64> {
    let (_, neg) = check_inputs(scores, labels)?;
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::invalid(format!("FPR limit must lie in (0, 1], got {fpr_limit}")));
    }
    let regions: Vec<&Vec<usize>> = regions.iter().filter(|r| !r.is_empty()).collect();
    if regions.is_empty() {
        return Err(Error::UndefinedMetric("PRO needs at least one anomalous region".into()));
    }
    if neg == 0 {
        return Err(Error::UndefinedMetric("PRO needs normal points".into()));
    }
    let mut region_of = vec![usize::MAX; scores.len()];
    for (r, members) in regions.iter().enumerate() {
        for &i in members.iter() {
            if i >= scores.len() || !labels[i] {
                return Err(Error::invalid(format!("region {r} contains point {i}, which is not anomalous")));
            }
            if region_of[i] != usize::MAX {
                return Err(Error::invalid(format!("point {i} belongs to two regions")));
            }
            region_of[i] = r;
        }
    }
    let order = ranked(scores);
    let mut overlap_sum = 0.0;
    let mut false_pos = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            let p = order[i];
            if !labels[p] {
                false_pos += 1;
            } else if region_of[p] != usize::MAX {
                let r = region_of[p];
                overlap_sum += 1.0 / regions[r].len() as f64;
            }
            i += 1;
        }
        curve.push((false_pos as f64 / neg as f64, overlap_sum / regions.len() as f64));
    }
    Ok(integrate_to(&curve, fpr_limit) / fpr_limit)
}

/// Trapezoid area under a curve with non-decreasing x from 0 to `limit`.
fn integrate_to(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut prev = (0.0, curve[0].1);
    let mut area = 0.0;
    for &(x, y) in curve {
        if x >= limit {
            let t = if x > prev.0 { (limit - prev.0) / (x - prev.0) } else { 0.0 };
            let y_at = prev.1 + t * (y - prev.1);
            area += (limit - prev.0) * (prev.1 + y_at) / 2.0;
            return area;
        }
        area += (x - prev.0) * (prev.1 + y) / 2.0;
        prev = (x, y);
    }
    area + (limit - prev.0) * prev.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_extremes_and_ties() {
        let l = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &l).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4, 0.3, 0.2, 0.1], &l).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 4], &l).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut labels = vec![false; n];
        labels[n - 1] = true;
        assert!((average_precision(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        assert!(average_precision(&[0.1], &[false]).is_err());
    }

    #[test]
    fn pro_perfect_and_constant() {
        let scores = [0.9, 0.8, 0.1, 0.2, 0.05, 0.7];
        let labels = [true, true, false, false, false, true];
        let regions = vec![vec![0, 1], vec![5]];
        assert!((pro(&scores, &labels, &regions, 0.3).unwrap() - 1.0).abs() < 1e-12);
        let flat = [0.5; 6];
        assert!((pro(&flat, &labels, &regions, 0.3).unwrap() - 1.0).abs() < 1e-12);
        assert!(pro(&scores, &labels, &[], 0.3).is_err());
    }

    #[test]
    fn fusion_reductions() {
        let (m, y) = fuse(&[0.2, 0.6], 0.3, &[0.2, 0.6], 0.3, 0.5).unwrap();
        assert_eq!(m, vec![0.2, 0.6]);
        assert!((y - 0.9).abs() < 1e-15);
        let (m, y) = fuse(&[0.2, 0.6], 0.3, &[0.9, 0.0], 0.8, 1.0).unwrap();
        assert_eq!((m, y), (vec![0.2, 0.6], 0.3 + 0.6));
        let (m, _) = fuse(&[0.2, 0.6], 0.3, &[0.9, 0.0], 0.8, 0.0).unwrap();
        assert_eq!(m, vec![0.9, 0.0]);
        assert!(fuse(&[0.0], 0.0, &[0.0], 0.0, 1.5).is_err());
    }
}
