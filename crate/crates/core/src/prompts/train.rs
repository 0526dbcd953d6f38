use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bank::{Branch, PromptBank, State};
use super::graph::{record_branch, record_branch_con, record_branch_loss, record_prompts, ProjectionMaps, ScoringOptions, Targets};
use crate::autodiff::{Adam, Tape, Tensor};
use crate::encoder::{FeatureSet, Modality};
use crate::error::{Error, Result};
use crate::geometry::{project_labels, PointCloud, ViewBundle};

/// One labeled training sample with both branches' features.
#[derive(Clone, Debug)]
pub struct Stage2Sample {
    pub render: FeatureSet,
    pub aligned: FeatureSet,
    pub maps: Arc<ProjectionMaps>,
    pub targets: Targets,
}

impl Stage2Sample {
    pub fn new(render: FeatureSet, aligned: FeatureSet, cloud: &PointCloud, views: &ViewBundle, maps: Arc<ProjectionMaps>) -> Result<Self> {
        if render.modality != Modality::Render || aligned.modality != Modality::Aligned {
            return Err(Error::invalid("stage 2 needs r and r_a features"));
        }
        render.check_compatible(&aligned)?;
        maps.check(&render)?;
        let masks = project_labels(cloud, views)?;
        let labels = cloud.labels().ok_or_else(|| Error::MissingLabels("stage 2 sample".into()))?;
        let pooled = masks.pooled(render.grid.0, render.grid.1)?;
        let targets = Targets {
            label: f64::from(u8::from(masks.label)),
            view_labels: masks.view_labels().into_iter().map(|b| f64::from(u8::from(b))).collect(),
            points: labels.iter().map(|&y| f64::from(y)).collect(),
            masks: masks.masks.iter().flatten().map(|&y| f64::from(y)).collect(),
            pooled: pooled.iter().flatten().map(|&y| f64::from(y)).collect(),
        };
        Ok(Self { render, aligned, maps, targets })
    }

    fn features(&self, branch: Branch) -> &FeatureSet {
        match branch {
            Branch::Aligned => &self.aligned,
            Branch::Render => &self.render,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Schedule {
    pub epochs: usize,
    /// First epoch that adds `λ_con · L_con`.
    pub con_start: usize,
    pub lambda_con: f64,
    pub batch_size: usize,
    pub adam: Adam,
    pub seed: u64,
    pub scoring: ScoringOptions,
}

impl Default for Stage2Schedule {
    fn default() -> Self {
        Self {
            epochs: 15,
            con_start: 10,
            lambda_con: 0.05,
            batch_size: 4,
            adam: Adam::default(),
            seed: 0,
            scoring: ScoringOptions::default(),
        }
    }
}

impl Stage2Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.con_start > self.epochs {
            return Err(Error::invalid(format!(
                "contrastive activation epoch {} after stage end {}",
                self.con_start, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lambda_con >= 0.0) {
            return Err(Error::invalid(format!("λ_con must be ≥ 0, got {}", self.lambda_con)));
        }
        Ok(())
    }

    pub fn contrastive_at(&self, epoch: usize) -> bool {
        epoch >= self.con_start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Epoch {
    pub epoch: usize,
    /// Whether `λ_con · L_con` was part of the objective.
    pub contrastive: bool,
    pub cls: f64,
    pub seg: f64,
    pub con: f64,
    pub total: f64,
}

struct SampleResult {
    grads: Vec<Tensor>,
    cls: f64,
    seg: f64,
}

fn sample_gradient(bank: &PromptBank, s: &Stage2Sample, opts: &ScoringOptions) -> Result<SampleResult> {
    let mut tape = Tape::new();
    let prompts = record_prompts(&mut tape, bank);
    let mut parts = Vec::new();
    let (mut cls, mut seg) = (0.0, 0.0);
    for branch in Branch::ALL {
        let g = record_branch(
            &mut tape,
            s.features(branch),
            prompts.get(branch, State::Normal),
            prompts.get(branch, State::Anomalous),
            bank.tau,
            opts.tau_in_maps,
        );
        let l = record_branch_loss(&mut tape, &g, &s.maps, &s.targets, opts);
        cls += tape.scalar(l.cls);
        seg += tape.scalar(l.seg3d) + tape.scalar(l.seg2d);
        parts.extend([l.cls, l.seg3d, l.seg2d]);
    }
    let stacked = tape.concat(&parts);
    let total = tape.sum(stacked);
    let grads = tape.backward(total)?;
    Ok(SampleResult { grads: prompts.raw.iter().map(|&v| grads.wrt(v)).collect(), cls, seg })
}

/// Gradients and value of `Σ_m L_con^m`, each with the other branch held fixed.
fn con_gradient(bank: &PromptBank) -> Result<(Vec<Tensor>, f64)> {
    let mut tape = Tape::new();
    let prompts = record_prompts(&mut tape, bank);
    let a = record_branch_con(&mut tape, &prompts, Branch::Aligned);
    let b = record_branch_con(&mut tape, &prompts, Branch::Render);
    let total = tape.add(a, b);
    let grads = tape.backward(total)?;
    Ok((prompts.raw.iter().map(|&v| grads.wrt(v)).collect(), tape.scalar(total)))
}

/// Adam over the four prompt embeddings with re-normalization after each step.
pub fn train_stage2(data: &[Stage2Sample], bank: &mut PromptBank, sched: &Stage2Schedule) -> Result<Vec<Stage2Epoch>> {
    sched.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("stage 2 dataset is empty"));
    }
    if let Some(s) = data.iter().find(|s| s.render.dim != bank.dim) {
        return Err(Error::shape(format!("features have d={}, prompts have d={}", s.render.dim, bank.dim)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let contrastive = sched.contrastive_at(epoch);
        order.shuffle(&mut rng);
        let (mut cls, mut seg, mut con, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(sched.batch_size) {
            let snapshot: &PromptBank = bank;
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| sample_gradient(snapshot, &data[i], &sched.scoring))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            for p in &mut bank.params {
                p.zero_grad();
            }
            for r in &results {
                cls += r.cls;
                seg += r.seg;
                for (p, g) in bank.params.iter_mut().zip(&r.grads) {
                    p.accumulate(&g.map(|x| x * scale))?;
                }
            }
            if contrastive && sched.lambda_con > 0.0 {
                let (grads, value) = con_gradient(bank)?;
                con += value;
                steps += 1;
                for (p, g) in bank.params.iter_mut().zip(&grads) {
                    p.accumulate(&g.map(|x| x * sched.lambda_con))?;
                }
            }
            for p in &mut bank.params {
                sched.adam.step(p)?;
            }
            bank.renormalize()?;
        }
        let n = data.len() as f64;
        let con = if steps > 0 { con / steps as f64 } else { 0.0 };
        let (cls, seg) = (cls / n, seg / n);
        let weight = if contrastive { sched.lambda_con } else { 0.0 };
        let entry = Stage2Epoch { epoch, contrastive, cls, seg, con, total: cls + seg + weight * con };
        debug!("stage2 epoch {epoch}: loss {:.6} contrastive={contrastive}", entry.total);
        log.push(entry);
    }
    Ok(log)
}
