use std::fmt::Write as _;
use std::path::Path;

use super::{auroc, average_precision, pro};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};

const SCORE_MAGIC: &[u8; 4] = b"A3SC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    Fused,
    AlignedOnly,
    RenderOnly,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::Fused, EvalMode::AlignedOnly, EvalMode::RenderOnly];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Fused => "fused",
            EvalMode::AlignedOnly => "r_a-only",
            EvalMode::RenderOnly => "r-only",
        }
    }
}

/// Image score and per-point anomaly map of one test sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePrediction {
    pub image_score: f64,
    pub point_scores: Vec<f64>,
}

/// Ground truth for one test sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTruth {
    pub label: bool,
    pub point_labels: Vec<u8>,
    /// Connected anomalous regions as point indices.
    pub regions: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: EvalMode,
    /// O-R
    pub image_auroc: f64,
    /// O-A
    pub image_ap: f64,
    /// P-R
    pub point_auroc: f64,
    /// P-P
    pub pro: f64,
    pub samples: usize,
    pub points: usize,
}

impl MetricsReport {
    /// Image metrics over `ŷ` and point metrics over the concatenated maps of all samples.
    pub fn evaluate(mode: EvalMode, preds: &[SamplePrediction], truths: &[SampleTruth], pro_limit: f64) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::shape(format!("{} predictions for {} test samples", preds.len(), truths.len())));
        }
        if preds.is_empty() {
            return Err(Error::invalid("no test samples to evaluate"));
        }
        let image_scores: Vec<f64> = preds.iter().map(|p| p.image_score).collect();
        let image_labels: Vec<bool> = truths.iter().map(|t| t.label).collect();
        let mut point_scores = Vec::new();
        let mut point_labels = Vec::new();
        let mut regions = Vec::new();
        for (k, (p, t)) in preds.iter().zip(truths).enumerate() {
            if p.point_scores.len() != t.point_labels.len() {
                return Err(Error::shape(format!(
                    "sample {k}: {} point scores for {} labels",
                    p.point_scores.len(),
                    t.point_labels.len()
                )));
            }
            let offset = point_scores.len();
            regions.extend(t.regions.iter().map(|r| r.iter().map(|i| i + offset).collect::<Vec<_>>()));
            point_scores.extend_from_slice(&p.point_scores);
            point_labels.extend(t.point_labels.iter().map(|&y| y == 1));
        }
        Ok(Self {
            mode,
            image_auroc: auroc(&image_scores, &image_labels)?,
            image_ap: average_precision(&image_scores, &image_labels)?,
            point_auroc: auroc(&point_scores, &point_labels)?,
            pro: pro(&point_scores, &point_labels, &regions, pro_limit)?,
            samples: preds.len(),
            points: point_scores.len(),
        })
    }

    /// `[section]` headers followed by `key: value` lines.
    pub fn to_text(reports: &[MetricsReport]) -> String {
        let mut out = String::new();
        for (i, r) in reports.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", r.mode.name());
            let _ = writeln!(out, "samples: {}", r.samples);
            let _ = writeln!(out, "points: {}", r.points);
            let _ = writeln!(out, "image_auroc: {:.6}", r.image_auroc);
            let _ = writeln!(out, "image_ap: {:.6}", r.image_ap);
            let _ = writeln!(out, "point_auroc: {:.6}", r.point_auroc);
            let _ = writeln!(out, "pro: {:.6}", r.pro);
        }
        out
    }

    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut out = String::from("mode,samples,points,image_auroc,image_ap,point_auroc,pro\n");
        for r in reports {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.mode.name(),
                r.samples,
                r.points,
                r.image_auroc,
                r.image_ap,
                r.point_auroc,
                r.pro
            );
        }
        out
    }
}

/// "A3SC": magic, count u64, float32 values (little-endian).
pub fn scores_to_bytes(scores: &[f64]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(SCORE_MAGIC);
    w.u64(scores.len() as u64);
    for &s in scores {
        w.f32(s as f32);
    }
    w.into_inner()
}

pub fn scores_from_bytes(data: &[u8]) -> Result<Vec<f32>> {
    let mut r = Reader::new("A3SC", data);
    r.magic(SCORE_MAGIC)?;
    let n = r.usize_from_u64("score count")?;
    let v = r.f32s(n)?;
    r.finish()?;
    Ok(v)
}

pub fn save_scores(scores: &[f64], path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(&scores_to_bytes(scores));
    w.write_to(path)
}

pub fn load_scores(path: &Path) -> Result<Vec<f32>> {
    scores_from_bytes(&read_file(path)?)
}
