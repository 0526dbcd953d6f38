//! Finite-difference checks of every training objective on small random instances.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aligner::{global_loss, local_loss, loss::record_scr_weights, Mlp, MlpVars};
use crate::autodiff::{check_gradients, Tape, Tensor, Var};
use crate::encoder::{FeatureSet, Modality};
use crate::error::Result;
use crate::geometry::{make_views, Averaging, PointCloud, ViewSpec};
use crate::prompts::graph::{record_branch, record_branch_loss, record_prompt, ScoringOptions, SegResolution};
use crate::prompts::{record_bce, record_con, record_dice, record_focal, LossParams, ProjectionMaps, Stage2Sample};

const STEP: f64 = 1e-6;
const VIEWS: usize = 2;
const GRID: (usize, usize) = (2, 2);
const DIM: usize = 6;
const HIDDEN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Global,
    Local,
    LocalWeighted,
    Cls,
    Dice,
    Focal,
    Seg3d,
    Seg2d,
    Contrastive,
}

impl Objective {
    pub const ALL: [Objective; 9] = [
        Objective::Global,
        Objective::Local,
        Objective::LocalWeighted,
        Objective::Cls,
        Objective::Dice,
        Objective::Focal,
        Objective::Seg3d,
        Objective::Seg2d,
        Objective::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Global => "L_g",
            Objective::Local => "L_l",
            Objective::LocalWeighted => "L_l^w",
            Objective::Cls => "L_cls",
            Objective::Dice => "Dice",
            Objective::Focal => "Focal",
            Objective::Seg3d => "L_seg^3D",
            Objective::Seg2d => "L_seg^2D",
            Objective::Contrastive => "L_con",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub objective: Objective,
    pub instances: usize,
    pub max_rel_error: f64,
    pub seconds: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let v: f64 = rng.random_range(0.0..1.0);
            scale * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect()
}

fn features(rng: &mut ChaCha8Rng, modality: Modality) -> FeatureSet {
    let n = GRID.0 * GRID.1;
    let g = gaussian(rng, VIEWS * DIM, 1.0).into_iter().map(|v| v as f32).collect();
    let l = gaussian(rng, VIEWS * n * DIM, 1.0).into_iter().map(|v| v as f32).collect();
    FeatureSet::new(modality, GRID, DIM, g, l).expect("valid random features")
}

fn mlp_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let m = |r: usize, c: usize, rng: &mut ChaCha8Rng| Tensor::matrix(r, c, gaussian(rng, r * c, 0.5)).unwrap();
    let v = |n: usize, rng: &mut ChaCha8Rng| Tensor::vector(gaussian(rng, n, 0.2));
    vec![m(DIM, HIDDEN, rng), v(HIDDEN, rng), m(HIDDEN, HIDDEN, rng), v(HIDDEN, rng), m(HIDDEN, DIM, rng), v(DIM, rng)]
}

fn aligner_case(objective: Objective, rng: &mut ChaCha8Rng) -> Result<f64> {
    let render = features(rng, Modality::Render);
    let rgb = features(rng, Modality::Rgb);
    let lambda = rng.random_range(0.0..4.0);
    let mut inputs = mlp_inputs(rng);
    let (x, y) = match objective {
        Objective::Global => (render.globals_tensor(), rgb.globals_tensor()),
        _ => (render.locals_tensor(), rgb.locals_tensor()),
    };
    inputs.push(x);
    inputs.push(y);
    // The render input is differentiated too, which covers the path through the SCR weights.
    let wrt = [true, true, true, true, true, true, true, false];
    let report = check_gradients(&inputs, &wrt, STEP, |t, v| {
        let vars = MlpVars([v[0], v[1], v[2], v[3], v[4], v[5]]);
        let aligned = Mlp::forward(t, &vars, v[6]);
        let target = t.normalize_rows(v[7]);
        match objective {
            Objective::Global => global_loss(t, aligned, target),
            Objective::Local => local_loss(t, aligned, target, None),
            _ => {
                let w = record_scr_weights(t, v[6], v[7], GRID.0 * GRID.1, lambda, true);
                local_loss(t, aligned, target, Some(w))
            }
        }
    })?;
    Ok(report.max_rel_error)
}

fn unit_prompts(t: &mut Tape, v: &[Var]) -> (Var, Var) {
    (record_prompt(t, v[0]), record_prompt(t, v[1]))
}

fn prompt_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![Tensor::vector(gaussian(rng, DIM, 1.0)), Tensor::vector(gaussian(rng, DIM, 1.0))]
}

/// A small rendered cloud with random labels and the stage-2 targets it induces.
fn seg_sample(rng: &mut ChaCha8Rng) -> Result<Stage2Sample> {
    let points: Vec<[f32; 3]> = (0..40)
        .map(|_| {
            let p = gaussian(rng, 3, 1.0);
            [p[0] as f32, p[1] as f32, p[2] as f32]
        })
        .collect();
    let labels: Vec<u8> = (0..40).map(|i| u8::from(i < 4 || rng.random_bool(0.2))).collect();
    let cloud = PointCloud::new(points, Some(labels))?;
    let spec = ViewSpec { angles: vec![0.0, rng.random_range(0.5..2.5)], height: 8, width: 8, scale: 0.9 };
    let views = make_views(&cloud, &spec)?;
    let averaging = if rng.random_bool(0.5) { Averaging::AllViews } else { Averaging::VisibleViews };
    let maps = Arc::new(ProjectionMaps::new(&views, GRID, averaging)?);
    let render = features(rng, Modality::Render);
    let aligned = FeatureSet { modality: Modality::Aligned, ..render.clone() };
    Stage2Sample::new(render, aligned, &cloud, &views, maps)
}

fn prompt_case(objective: Objective, rng: &mut ChaCha8Rng) -> Result<f64> {
    let tau = rng.random_range(0.05..1.0);
    let inputs = prompt_inputs(rng);
    let wrt = [true, true];
    let report = match objective {
        Objective::Cls => {
            let f = features(rng, Modality::Render);
            let view_labels: Vec<f64> = (0..VIEWS).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            let label = view_labels.iter().copied().fold(0.0, f64::max);
            check_gradients(&inputs, &wrt, STEP, |t, v| {
                let (n, a) = unit_prompts(t, v);
                let g = record_branch(t, &f, n, a, tau, false);
                let x = record_bce(t, g.view_probs, &view_labels);
                let y = record_bce(t, g.image_prob, &[label]);
                t.add(x, y)
            })?
        }
        Objective::Seg3d | Objective::Seg2d => {
            let sample = seg_sample(rng)?;
            let opts = ScoringOptions {
                tau_in_maps: rng.random_bool(0.5),
                resolution: if rng.random_bool(0.5) { SegResolution::Image } else { SegResolution::Patch },
                losses: LossParams::default(),
            };
            check_gradients(&inputs, &wrt, STEP, |t, v| {
                let (n, a) = unit_prompts(t, v);
                let g = record_branch(t, &sample.render, n, a, tau, opts.tau_in_maps);
                let l = record_branch_loss(t, &g, &sample.maps, &sample.targets, &opts);
                if objective == Objective::Seg3d {
                    l.seg3d
                } else {
                    l.seg2d
                }
            })?
        }
        _ => {
            let mut all = inputs;
            all.extend(prompt_inputs(rng));
            check_gradients(&all, &[true, true, false, false], STEP, |t, v| {
                let (n, a) = unit_prompts(t, v);
                let (rn, ra) = unit_prompts(t, &v[2..]);
                record_con(t, n, a, rn, ra)
            })?
        }
    };
    Ok(report.max_rel_error)
}

fn elementwise_case(objective: Objective, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = 24;
    let blocks = if rng.random_bool(0.5) { 1 } else { 3 };
    let logits = Tensor::vector(gaussian(rng, n, 1.5));
    let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
    let lp = LossParams {
        dice_eps: rng.random_range(0.1..2.0),
        focal_gamma: rng.random_range(0.0..3.0),
        focal_alpha: rng.random_range(0.1..0.9),
    };
    let report = check_gradients(&[logits], &[true], STEP, |t, v| {
        let a = t.sigmoid(v[0]);
        match objective {
            Objective::Dice => record_dice(t, a, &target, blocks, lp.dice_eps),
            _ => {
                let normal = t.rsub_scalar(1.0, a);
                record_focal(t, normal, a, &target, &lp)
            }
        }
    })?;
    Ok(report.max_rel_error)
}

/// Runs `instances` random checks of one objective; instance `k` uses seed `seed + k`.
pub fn check_objective(objective: Objective, instances: usize, seed: u64) -> Result<SuiteResult> {
    let start = Instant::now();
    let errors: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64) ^ (objective as u64) << 56);
            match objective {
                Objective::Global | Objective::Local | Objective::LocalWeighted => aligner_case(objective, &mut rng),
                Objective::Dice | Objective::Focal => elementwise_case(objective, &mut rng),
                _ => prompt_case(objective, &mut rng),
            }
        })
        .collect::<Result<_>>()?;
    Ok(SuiteResult {
        objective,
        instances,
        max_rel_error: errors.into_iter().fold(0.0, f64::max),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    Objective::ALL.iter().map(|&o| check_objective(o, instances, seed)).collect()
}
