//! Stage-2 objectives as tape builders plus value-level wrappers.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Dice smoothing and Focal parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub dice_eps: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { dice_eps: 1.0, focal_gamma: 2.0, focal_alpha: 0.25 }
    }
}

/// Mean binary cross-entropy of probabilities `p` against `targets`, with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn record_bce(tape: &mut Tape, p: Var, targets: &[f64]) -> Var {
    let n = targets.len();
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = tape.log(pc);
    let q = tape.rsub_scalar(1.0, pc);
    let lq = tape.log(q);
    let t = tape.constant(Tensor::vector(targets.to_vec()));
    let u = tape.constant(Tensor::vector(targets.iter().map(|t| 1.0 - t).collect()));
    let a = tape.mul(t, lp);
    let b = tape.mul(u, lq);
    let s = tape.add(a, b);
    let m = tape.mean(s);
    debug_assert_eq!(tape.value(p).len(), n);
    tape.scale(m, -1.0)
}

/// Mean over `blocks` equal segments of `1 − (2Σ p·t + ε)/(Σp + Σt + ε)`.
pub fn record_dice(tape: &mut Tape, pred: Var, target: &[f64], blocks: usize, eps: f64) -> Var {
    let size = target.len() / blocks;
    let t = tape.constant(Tensor::vector(target.to_vec()));
    let inter = tape.mul(pred, t);
    let inter = tape.sum_blocks(inter, blocks);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, eps);
    let psum = tape.sum_blocks(pred, blocks);
    let tsum: Vec<f64> = target.chunks(size).map(|c| c.iter().sum::<f64>() + eps).collect();
    let tsum = tape.constant(Tensor::vector(tsum));
    let den = tape.add(psum, tsum);
    let ratio = tape.div(num, den);
    let loss = tape.rsub_scalar(1.0, ratio);
    tape.mean(loss)
}

/// Mean over pixels of `−α_t (1 − p_t)^γ ln p_t`.
pub fn record_focal(tape: &mut Tape, normal: Var, anomalous: Var, target: &[f64], lp: &LossParams) -> Var {
    let t = tape.constant(Tensor::vector(target.to_vec()));
    let u = tape.constant(Tensor::vector(target.iter().map(|t| 1.0 - t).collect()));
    let a = tape.mul(anomalous, t);
    let b = tape.mul(normal, u);
    let pt = tape.add(a, b);
    let pt = tape.clamp(pt, PROB_CLAMP, 1.0);
    let log_pt = tape.log(pt);
    let miss = tape.rsub_scalar(1.0, pt);
    let modulating = tape.powf(miss, lp.focal_gamma);
    let alpha: Vec<f64> = target.iter().map(|&t| if t > 0.5 { lp.focal_alpha } else { 1.0 - lp.focal_alpha }).collect();
    let alpha = tape.constant(Tensor::vector(alpha));
    let w = tape.mul(alpha, modulating);
    let terms = tape.mul(w, log_pt);
    let m = tape.mean(terms);
    tape.scale(m, -1.0)
}

/// `½[softplus(⟨N,A⟩ − ⟨N,N̄⟩) + softplus(⟨A,N⟩ − ⟨A,Ā⟩)]` on unit `[1, d]` rows.
pub fn record_con(tape: &mut Tape, normal: Var, anomalous: Var, ref_normal: Var, ref_anomalous: Var) -> Var {
    let nn = tape.row_dot(normal, ref_normal);
    let na = tape.row_dot(normal, anomalous);
    let aa = tape.row_dot(anomalous, ref_anomalous);
    let d1 = tape.sub(na, nn);
    let d2 = tape.sub(na, aa);
    let l1 = tape.softplus(d1);
    let l2 = tape.softplus(d2);
    let s = tape.add(l1, l2);
    let s = tape.sum(s);
    tape.scale(s, 0.5)
}

fn eval(build: impl FnOnce(&mut Tape) -> Var) -> Result<f64> {
    let mut tape = Tape::new();
    let out = build(&mut tape);
    tape.check()?;
    Ok(tape.scalar(out))
}

fn binary(target: &[f64]) -> Result<()> {
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid("targets must be 0 or 1"));
    }
    Ok(())
}

/// `1 − (2Σ pred·target + ε)/(Σ pred + Σ target + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!("dice inputs of length {} and {}", pred.len(), target.len())));
    }
    if pred.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::invalid("dice prediction must be non-negative"));
    }
    binary(target)?;
    eval(|tape| {
        let p = tape.leaf(Tensor::vector(pred.to_vec()));
        record_dice(tape, p, target, 1, eps)
    })
}

/// Focal loss over a two-channel map given as separate normal/anomalous channels.
pub fn focal_loss(normal: &[f64], anomalous: &[f64], target: &[f64], lp: &LossParams) -> Result<f64> {
    if normal.len() != anomalous.len() || normal.len() != target.len() || normal.is_empty() {
        return Err(Error::shape("focal channels and target must share a non-zero length"));
    }
    if normal.iter().zip(anomalous).any(|(n, a)| (n + a - 1.0).abs() > 1e-9) {
        return Err(Error::invalid("focal channels must sum to 1"));
    }
    binary(target)?;
    eval(|tape| {
        let n = tape.leaf(Tensor::vector(normal.to_vec()));
        let a = tape.leaf(Tensor::vector(anomalous.to_vec()));
        record_focal(tape, n, a, target, lp)
    })
}

/// `(1/V) Σ CE(max Y_i, ŷ_i) + CE(y, ŷ)`.
pub fn loss_cls(view_probs: &[f64], image_prob: f64, view_targets: &[f64], image_target: f64) -> Result<f64> {
    if view_probs.len() != view_targets.len() || view_probs.is_empty() {
        return Err(Error::shape(format!("{} view predictions for {} targets", view_probs.len(), view_targets.len())));
    }
    binary(view_targets)?;
    binary(&[image_target])?;
    eval(|tape| {
        let p = tape.leaf(Tensor::vector(view_probs.to_vec()));
        let a = record_bce(tape, p, view_targets);
        let q = tape.leaf(Tensor::vector(vec![image_prob]));
        let b = record_bce(tape, q, &[image_target]);
        tape.add(a, b)
    })
}
