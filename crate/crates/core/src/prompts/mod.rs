//! Stage 2: dual-branch prompt learning, score maps, and their objectives.

mod bank;
pub(crate) mod graph;
mod loss;
mod train;

pub use bank::{Branch, PromptBank, State};
pub use graph::{ProjectionMaps, ScoringOptions, SegResolution, Targets};
pub use loss::{dice_loss, focal_loss, loss_cls, record_bce, record_con, record_dice, record_focal, LossParams, PROB_CLAMP};
pub use train::{train_stage2, Stage2Epoch, Stage2Sample, Stage2Schedule};

use crate::autodiff::{sigmoid, Tape};
use crate::encoder::FeatureSet;
use crate::error::{Error, Result};

fn dot(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| f64::from(x) * y).sum()
}

fn check_branch(features: &FeatureSet, bank: &PromptBank, branch: Branch) -> Result<()> {
    if features.modality != branch.modality() {
        return Err(Error::invalid(format!(
            "{} features scored on the {} branch",
            features.modality.name(),
            branch.modality().name()
        )));
    }
    if features.dim != bank.dim {
        return Err(Error::shape(format!("features have d={}, prompts have d={}", features.dim, bank.dim)));
    }
    Ok(())
}

/// Per-view `ŷ_i = σ((⟨G_i,T^A⟩ − ⟨G_i,T^N⟩)/τ)` and their mean `ŷ`.
pub fn predict_image(features: &FeatureSet, bank: &PromptBank, branch: Branch) -> Result<(Vec<f64>, f64)> {
    check_branch(features, bank, branch)?;
    if !(bank.tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {}", bank.tau)));
    }
    let (tn, ta) = (bank.prompt(branch, State::Normal), bank.prompt(branch, State::Anomalous));
    let probs: Vec<f64> = (0..features.views())
        .map(|i| {
            let g = features.global(i);
            sigmoid((dot(g, ta) - dot(g, tn)) / bank.tau)
        })
        .collect();
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok((probs, mean))
}

/// Patch-level `(M_A, M_N)`, each `V·N` in view-major order.
pub fn score_map_2d(
    features: &FeatureSet,
    bank: &PromptBank,
    branch: Branch,
    tau_in_maps: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_branch(features, bank, branch)?;
    let (tn, ta) = (bank.prompt(branch, State::Normal), bank.prompt(branch, State::Anomalous));
    let scale = if tau_in_maps { 1.0 / bank.tau } else { 1.0 };
    let a: Vec<f64> = features
        .locals
        .chunks(features.dim)
        .map(|f| sigmoid(scale * (dot(f, ta) - dot(f, tn))))
        .collect();
    let n = a.iter().map(|x| 1.0 - x).collect();
    Ok((a, n))
}

/// Upsamples each view's patch map and back-projects it onto the points.
pub fn score_map_3d(map: &[f64], maps: &ProjectionMaps) -> Result<Vec<f64>> {
    if map.len() != maps.views * maps.patches() {
        return Err(Error::shape(format!(
            "{} map values for V={} × N={}",
            map.len(),
            maps.views,
            maps.patches()
        )));
    }
    Ok(maps.back.apply(&maps.upsample.apply(map)))
}

/// `L_con^m` for the current bank; the other branch acts as a fixed reference.
pub fn loss_con(bank: &PromptBank, branch: Branch) -> Result<f64> {
    let mut tape = Tape::new();
    let prompts = graph::record_prompts(&mut tape, bank);
    let l = graph::record_branch_con(&mut tape, &prompts, branch);
    tape.check()?;
    Ok(tape.scalar(l))
}

/// Every prediction of one branch for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchScores {
    pub branch: Branch,
    pub view_probs: Vec<f64>,
    pub image_prob: f64,
    /// `M_{i,A}` on the patch grid, `V·N`.
    pub map_a: Vec<f64>,
    pub points_a: Vec<f64>,
    pub points_n: Vec<f64>,
}

pub fn score_branch(
    features: &FeatureSet,
    bank: &PromptBank,
    branch: Branch,
    maps: &ProjectionMaps,
    tau_in_maps: bool,
) -> Result<BranchScores> {
    maps.check(features)?;
    let (view_probs, image_prob) = predict_image(features, bank, branch)?;
    let (map_a, map_n) = score_map_2d(features, bank, branch, tau_in_maps)?;
    let points_a = score_map_3d(&map_a, maps)?;
    let points_n = score_map_3d(&map_n, maps)?;
    Ok(BranchScores { branch, view_probs, image_prob, map_a, points_a, points_n })
}

/// Stage-2 losses of one branch on one sample: `(L_cls, L_seg^3D, L_seg^2D)`.
pub fn branch_losses(
    features: &FeatureSet,
    bank: &PromptBank,
    branch: Branch,
    maps: &ProjectionMaps,
    targets: &Targets,
    opts: &ScoringOptions,
) -> Result<(f64, f64, f64)> {
    check_branch(features, bank, branch)?;
    maps.check(features)?;
    let mut tape = Tape::new();
    let prompts = graph::record_prompts(&mut tape, bank);
    let g = graph::record_branch(
        &mut tape,
        features,
        prompts.get(branch, State::Normal),
        prompts.get(branch, State::Anomalous),
        bank.tau,
        opts.tau_in_maps,
    );
    let l = graph::record_branch_loss(&mut tape, &g, maps, targets, opts);
    tape.check()?;
    Ok((tape.scalar(l.cls), tape.scalar(l.seg3d), tape.scalar(l.seg2d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Modality;

    fn bank_with(n: Vec<f64>, a: Vec<f64>, branch: Branch) -> PromptBank {
        let mut b = PromptBank::new(n.len(), 0.07, 12, 0).unwrap();
        b.set(branch, State::Normal, n).unwrap();
        b.set(branch, State::Anomalous, a).unwrap();
        b
    }

    #[test]
    fn equal_similarity_gives_half() {
        let bank = bank_with(vec![1.0, 0.0], vec![0.0, 1.0], Branch::Render);
        let g = std::f32::consts::FRAC_1_SQRT_2;
        let fs = FeatureSet::new(Modality::Render, (1, 1), 2, vec![g, g], vec![g, g]).unwrap();
        let (p, mean) = predict_image(&fs, &bank, Branch::Render).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-7 && (mean - 0.5).abs() < 1e-7);
        let (a, n) = score_map_2d(&fs, &bank, Branch::Render, false).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-7 && (a[0] + n[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_of_tau_ln3_gives_three_quarters() {
        let tau = 0.07;
        let gap = tau * 3f64.ln();
        // G = (cos θ, sin θ) against T^N = e1, T^A = e2 gives s_A − s_N = sin θ − cos θ.
        let theta = std::f64::consts::FRAC_PI_4 + (gap / 2f64.sqrt()).asin();
        let fs = FeatureSet::new(Modality::Aligned, (1, 1), 2, vec![theta.cos() as f32, theta.sin() as f32], vec![1.0, 0.0]).unwrap();
        let bank = bank_with(vec![1.0, 0.0], vec![0.0, 1.0], Branch::Aligned);
        let (p, _) = predict_image(&fs, &bank, Branch::Aligned).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn wrong_branch_rejected() {
        let bank = PromptBank::new(2, 0.07, 12, 0).unwrap();
        let fs = FeatureSet::new(Modality::Rgb, (1, 1), 2, vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!(predict_image(&fs, &bank, Branch::Render).is_err());
    }

    #[test]
    fn con_extremes() {
        let mut bank = PromptBank::new(2, 0.07, 12, 0).unwrap();
        for b in Branch::ALL {
            bank.set(b, State::Normal, vec![1.0, 0.0]).unwrap();
            bank.set(b, State::Anomalous, vec![-1.0, 0.0]).unwrap();
        }
        let v = loss_con(&bank, Branch::Aligned).unwrap();
        assert!((v - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.1269).abs() < 1e-4);
    }
}
