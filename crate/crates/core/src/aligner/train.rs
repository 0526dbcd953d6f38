use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{global_loss, local_loss, record_scr_weights};
use super::{AlignerParams, Mlp};
use crate::autodiff::{Adam, Tape, Tensor};
use crate::encoder::{FeatureSet, Modality};
use crate::error::{Error, Result};

/// Paired rendering/RGB features of one training sample.
#[derive(Clone, Debug)]
pub struct AlignSample {
    pub render: FeatureSet,
    pub rgb: FeatureSet,
}

impl AlignSample {
    pub fn new(render: FeatureSet, rgb: FeatureSet) -> Result<Self> {
        if render.modality != Modality::Render || rgb.modality != Modality::Rgb {
            return Err(Error::invalid(format!(
                "stage 1 pairs r with R features, got {} and {}",
                render.modality.name(),
                rgb.modality.name()
            )));
        }
        render.check_compatible(&rgb)?;
        Ok(Self { render, rgb })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Schedule {
    pub epochs: usize,
    /// First epoch trained with the reweighted local loss.
    pub scr_start: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub adam: Adam,
    pub seed: u64,
    /// Compute the consistency matrix on unit-normalized rows.
    pub normalize_consistency: bool,
    pub detach_weights: bool,
}

impl Default for Stage1Schedule {
    fn default() -> Self {
        Self {
            epochs: 250,
            scr_start: 200,
            lambda: 1.0,
            batch_size: 4,
            adam: Adam::default(),
            seed: 0,
            normalize_consistency: true,
            detach_weights: true,
        }
    }
}

impl Stage1Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.scr_start > self.epochs {
            return Err(Error::invalid(format!(
                "SCR activation epoch {} after stage end {}",
                self.scr_start, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("λ must be ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn weighted_at(&self, epoch: usize) -> bool {
        epoch >= self.scr_start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Whether the SCR-weighted objective was in effect.
    pub weighted: bool,
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

struct SampleGrad {
    grads: Vec<Tensor>,
    global: f64,
    local: f64,
}

fn sample_gradient(params: &AlignerParams, s: &AlignSample, weighted: bool, sched: &Stage1Schedule) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let gv = params.global.record(&mut tape);
    let lv = params.local.record(&mut tape);
    let g_r = tape.constant(s.render.globals_tensor());
    let g_rgb = tape.constant(s.rgb.globals_tensor());
    let f_r = tape.constant(s.render.locals_tensor());
    let f_rgb = tape.constant(s.rgb.locals_tensor());
    let weights = if weighted {
        let w = record_scr_weights(&mut tape, f_r, f_rgb, s.render.patches(), sched.lambda, sched.normalize_consistency);
        Some(if sched.detach_weights { tape.constant(tape.value(w).clone()) } else { w })
    } else {
        None
    };
    let ga = Mlp::forward(&mut tape, &gv, g_r);
    let la = Mlp::forward(&mut tape, &lv, f_r);
    let lg = global_loss(&mut tape, ga, g_rgb);
    let ll = local_loss(&mut tape, la, f_rgb, weights);
    let total = tape.add(lg, ll);
    let grads = tape.backward(total)?;
    let vars = gv.all().iter().chain(lv.all());
    Ok(SampleGrad { grads: vars.map(|&v| grads.wrt(v)).collect(), global: tape.scalar(lg), local: tape.scalar(ll) })
}

/// Adam on `L_align` before `scr_start`, then on `L_align^w`.
///
/// Batches are drawn from a seeded shuffle each epoch and per-sample gradients
/// are summed in sample order, so results do not depend on thread count.
pub fn train_stage1(data: &[AlignSample], params: &mut AlignerParams, sched: &Stage1Schedule) -> Result<Vec<EpochLog>> {
    sched.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("stage 1 dataset is empty"));
    }
    if let Some(s) = data.iter().find(|s| s.render.dim != params.dim) {
        return Err(Error::shape(format!("features have d={}, aligner expects d={}", s.render.dim, params.dim)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let weighted = sched.weighted_at(epoch);
        order.shuffle(&mut rng);
        let (mut sum_g, mut sum_l) = (0.0, 0.0);
        for batch in order.chunks(sched.batch_size) {
            let snapshot: &AlignerParams = params;
            let results: Vec<SampleGrad> = batch
                .par_iter()
                .map(|&i| sample_gradient(snapshot, &data[i], weighted, sched))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            for p in params.parameters_mut() {
                p.zero_grad();
            }
            for r in &results {
                sum_g += r.global;
                sum_l += r.local;
                for (p, g) in params.parameters_mut().zip(&r.grads) {
                    p.accumulate(&g.map(|x| x * scale))?;
                }
            }
            for p in params.parameters_mut() {
                sched.adam.step(p)?;
            }
        }
        let n = data.len() as f64;
        let entry = EpochLog { epoch, weighted, global: sum_g / n, local: sum_l / n, total: (sum_g + sum_l) / n };
        debug!("stage1 epoch {epoch}: loss {:.6} weighted={weighted}", entry.total);
        log.push(entry);
    }
    Ok(log)
}
