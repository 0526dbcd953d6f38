use std::sync::Arc;

use super::bank::{Branch, PromptBank, State};
use super::loss::{record_bce, record_con, record_dice, record_focal, LossParams};
use crate::autodiff::{SparseMap, Tape, Var};
use crate::encoder::FeatureSet;
use crate::error::{Error, Result};
use crate::geometry::{back_projection_map, bilinear_map, Averaging, ViewBundle};

/// Fixed linear maps from patch-grid score maps to pixels and points for one sample.
#[derive(Clone, Debug)]
pub struct ProjectionMaps {
    pub grid: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub views: usize,
    pub points: usize,
    /// `V·H·W × V·N`, bilinear per view.
    pub upsample: Arc<SparseMap>,
    /// `P_n × V·H·W`.
    pub back: Arc<SparseMap>,
    /// `back ∘ upsample`, `P_n × V·N`.
    pub patch_to_point: Arc<SparseMap>,
}

impl ProjectionMaps {
    pub fn new(views: &ViewBundle, grid: (usize, usize), averaging: Averaging) -> Result<Self> {
        let single = bilinear_map(grid.0, grid.1, views.height, views.width)?;
        let upsample = single.block_diagonal(views.view_count());
        let back = back_projection_map(views, averaging)?;
        let patch_to_point = back.compose(&upsample)?;
        Ok(Self {
            grid,
            height: views.height,
            width: views.width,
            views: views.view_count(),
            points: views.point_count,
            upsample: Arc::new(upsample),
            back: Arc::new(back),
            patch_to_point: Arc::new(patch_to_point),
        })
    }

    pub fn patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn check(&self, features: &FeatureSet) -> Result<()> {
        if features.views() != self.views || features.grid != self.grid {
            return Err(Error::shape(format!(
                "features with V={} grid {:?} for maps with V={} grid {:?}",
                features.views(),
                features.grid,
                self.views,
                self.grid
            )));
        }
        Ok(())
    }
}

/// Where 2D segmentation terms are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SegResolution {
    /// Upsampled `H×W` maps against full-resolution masks.
    #[default]
    Image,
    /// Patch-grid maps against max-pooled masks.
    Patch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoringOptions {
    /// Divide patch similarities by τ in the 2D softmax as well.
    pub tau_in_maps: bool,
    pub resolution: SegResolution,
    pub losses: LossParams,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self { tau_in_maps: false, resolution: SegResolution::Image, losses: LossParams::default() }
    }
}

/// Unit `[1, d]` prompt rows recorded from raw embedding leaves.
pub(crate) fn record_prompt(tape: &mut Tape, raw: Var) -> Var {
    let d = tape.value(raw).len();
    let row = tape.reshape(raw, &[1, d]);
    tape.normalize_rows(row)
}

pub(crate) struct BranchGraph {
    pub view_probs: Var,
    pub image_prob: Var,
    pub map_a: Var,
    pub map_n: Var,
}

/// Image predictions and patch maps for one branch.
pub(crate) fn record_branch(
    tape: &mut Tape,
    features: &FeatureSet,
    normal: Var,
    anomalous: Var,
    tau: f64,
    tau_in_maps: bool,
) -> BranchGraph {
    let v = features.views();
    let g = tape.constant(features.globals_tensor());
    let f = tape.constant(features.locals_tensor());
    let tn = tape.transpose(normal);
    let ta = tape.transpose(anomalous);
    let diff = tape.sub(ta, tn);
    let gap = tape.matmul(g, diff);
    let gap = tape.reshape(gap, &[v]);
    let logits = tape.scale(gap, 1.0 / tau);
    let view_probs = tape.sigmoid(logits);
    let image_prob = tape.mean(view_probs);
    let rows = features.views() * features.patches();
    let pgap = tape.matmul(f, diff);
    let pgap = tape.reshape(pgap, &[rows]);
    let pgap = if tau_in_maps { tape.scale(pgap, 1.0 / tau) } else { pgap };
    let map_a = tape.sigmoid(pgap);
    let map_n = tape.rsub_scalar(1.0, map_a);
    BranchGraph { view_probs, image_prob, map_a, map_n }
}

/// Supervision for one stage-2 sample.
#[derive(Clone, Debug)]
pub struct Targets {
    pub label: f64,
    pub view_labels: Vec<f64>,
    pub points: Vec<f64>,
    /// `V·H·W`.
    pub masks: Vec<f64>,
    /// `V·N`.
    pub pooled: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BranchLoss {
    pub cls: Var,
    pub seg3d: Var,
    pub seg2d: Var,
}

pub(crate) fn record_branch_loss(
    tape: &mut Tape,
    graph: &BranchGraph,
    maps: &ProjectionMaps,
    targets: &Targets,
    opts: &ScoringOptions,
) -> BranchLoss {
    let v = maps.views;
    let a = record_bce(tape, graph.view_probs, &targets.view_labels);
    let b = record_bce(tape, graph.image_prob, &[targets.label]);
    let cls = tape.add(a, b);

    let eps = opts.losses.dice_eps;
    let pa = tape.sparse(graph.map_a, maps.patch_to_point.clone());
    let pn = tape.sparse(graph.map_n, maps.patch_to_point.clone());
    let inv_points: Vec<f64> = targets.points.iter().map(|y| 1.0 - y).collect();
    let d1 = record_dice(tape, pa, &targets.points, 1, eps);
    let d2 = record_dice(tape, pn, &inv_points, 1, eps);
    let seg3d = tape.add(d1, d2);

    let (ma, mn, mask) = match opts.resolution {
        SegResolution::Image => {
            let ua = tape.sparse(graph.map_a, maps.upsample.clone());
            let un = tape.rsub_scalar(1.0, ua);
            (ua, un, &targets.masks)
        }
        SegResolution::Patch => (graph.map_a, graph.map_n, &targets.pooled),
    };
    let inv_mask: Vec<f64> = mask.iter().map(|y| 1.0 - y).collect();
    let d1 = record_dice(tape, ma, mask, v, eps);
    let d2 = record_dice(tape, mn, &inv_mask, v, eps);
    let focal = record_focal(tape, mn, ma, mask, &opts.losses);
    let s = tape.add(d1, d2);
    let seg2d = tape.add(s, focal);
    BranchLoss { cls, seg3d, seg2d }
}

/// Prompt leaves in bank order and their unit rows.
pub(crate) struct PromptVars {
    pub raw: [Var; 4],
    pub unit: [Var; 4],
}

pub(crate) fn record_prompts(tape: &mut Tape, bank: &PromptBank) -> PromptVars {
    let raw: [Var; 4] = std::array::from_fn(|i| tape.leaf(bank.params[i].value.clone()));
    let unit = raw.map(|r| record_prompt(tape, r));
    PromptVars { raw, unit }
}

impl PromptVars {
    pub fn get(&self, branch: Branch, state: State) -> Var {
        self.unit[PromptBank::slot(branch, state)]
    }
}

/// `L_con^m` with the other branch's prompts copied in as constants.
pub(crate) fn record_branch_con(tape: &mut Tape, prompts: &PromptVars, branch: Branch) -> Var {
    let n = prompts.get(branch, State::Normal);
    let a = prompts.get(branch, State::Anomalous);
    let rn = tape.value(prompts.get(branch.other(), State::Normal)).clone();
    let ra = tape.value(prompts.get(branch.other(), State::Anomalous)).clone();
    let rn = tape.constant(rn);
    let ra = tape.constant(ra);
    record_con(tape, n, a, rn, ra)
}
