#![allow(dead_code)]

use std::path::Path;

use mvad::config::RunConfig;
use mvad::encoder::{FeatureSet, Modality};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `rows` random unit rows of width `d`, flattened.
pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<f32> {
    (0..rows).flat_map(|_| unit(&gaussian(rng, d))).map(|x| x as f32).collect()
}

pub fn random_set(rng: &mut ChaCha8Rng, modality: Modality, views: usize, grid: (usize, usize), d: usize) -> FeatureSet {
    let n = grid.0 * grid.1;
    FeatureSet::new(modality, grid, d, unit_rows(rng, views, d), unit_rows(rng, views * n, d)).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// A two-category run small enough to go through every stage in a few seconds.
pub const TINY: &str = r#"
seed = 5
[views]
count = 3
height = 42
width = 42
[encoder]
dim = 16
[aligner]
hidden = 16
[schedule]
align_epochs = 6
scr_start = 4
prompt_epochs = 3
con_start = 2
[synth]
categories = ["sphere", "box"]
points = 500
train_normal = 2
train_anomalous = 2
test_normal = 2
test_anomalous = 2
[experiment]
train = ["sphere"]
"#;

pub fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(TINY).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}
