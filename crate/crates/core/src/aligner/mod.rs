//! Stage 1: residual MLPs mapping rendering features into the RGB feature space.

pub(crate) mod loss;
mod train;

pub use loss::{
    consistency_matrix, global_loss, local_loss, loss_align, loss_align_weighted, scr_weights, AlignLosses,
};
pub use train::{train_stage1, AlignSample, EpochLog, Stage1Schedule};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Checkpoint, Parameter, Tape, Tensor, Var};
use crate::encoder::{FeatureSet, Modality};
use crate::error::{Error, Result};

/// `d → d_h → d_h → d` with GELU between layers; the last layer starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub params: Vec<Parameter>,
}

/// Tape handles for one [`Mlp`]: `[w0, b0, w1, b1, w2, b2]`.
#[derive(Clone, Copy, Debug)]
pub struct MlpVars(pub [Var; 6]);

impl MlpVars {
    pub fn all(&self) -> &[Var; 6] {
        &self.0
    }
}

impl Mlp {
    fn new(prefix: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dense = |fan_in: usize, fan_out: usize| {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            Tensor::matrix(fan_in, fan_out, data).unwrap()
        };
        let w0 = dense(dim, hidden);
        let w1 = dense(hidden, hidden);
        let params = vec![
            Parameter::new(format!("{prefix}.w0"), w0),
            Parameter::new(format!("{prefix}.b0"), Tensor::zeros(&[hidden])),
            Parameter::new(format!("{prefix}.w1"), w1),
            Parameter::new(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            Parameter::new(format!("{prefix}.w2"), Tensor::zeros(&[hidden, dim])),
            Parameter::new(format!("{prefix}.b2"), Tensor::zeros(&[dim])),
        ];
        Self { params }
    }

    pub fn record(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(std::array::from_fn(|i| tape.leaf(self.params[i].value.clone())))
    }

    /// `normalize(x + MLP(x))` row-wise for `x: [m, d]`.
    pub fn forward(tape: &mut Tape, vars: &MlpVars, x: Var) -> Var {
        let [w0, b0, w1, b1, w2, b2] = vars.0;
        let h = tape.matmul(x, w0);
        let h = tape.add_row(h, b0);
        let h = tape.gelu(h);
        let h = tape.matmul(h, w1);
        let h = tape.add_row(h, b1);
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2);
        let o = tape.add_row(o, b2);
        let r = tape.add(x, o);
        tape.normalize_rows(r)
    }
}

/// Global (`A_g`) and local (`A_l`) aligners.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignerParams {
    pub dim: usize,
    pub hidden: usize,
    pub global: Mlp,
    pub local: Mlp,
}

impl AlignerParams {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim < 2 || hidden == 0 {
            return Err(Error::invalid(format!("aligner needs d ≥ 2 and d_h ≥ 1, got {dim}, {hidden}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let global = Mlp::new("aligner.g", dim, hidden, &mut rng);
        let local = Mlp::new("aligner.l", dim, hidden, &mut rng);
        Ok(Self { dim, hidden, global, local })
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.global.params.iter_mut().chain(self.local.params.iter_mut())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_parameters(&self.global.params);
        ck.add_parameters(&self.local.params);
        ck
    }

    /// Rebuilds the aligner from a checkpoint, inferring `d` and `d_h` from `aligner.g.w0`.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let w0 = ck.require("aligner.g.w0")?;
        let &[dim, hidden] = w0.shape() else {
            return Err(Error::format("A3CK", format!("aligner.g.w0 has shape {:?}", w0.shape())));
        };
        let mut params = Self::new(dim, hidden, 0)?;
        ck.restore_parameters(&mut params.global.params)?;
        ck.restore_parameters(&mut params.local.params)?;
        Ok(params)
    }

    /// Maps an `r` feature set to `r_a`.
    pub fn align(&self, render: &FeatureSet) -> Result<FeatureSet> {
        if render.modality != Modality::Render {
            return Err(Error::invalid(format!("aligner expects r features, got {}", render.modality.name())));
        }
        if render.dim != self.dim {
            return Err(Error::shape(format!("features have d={}, aligner expects d={}", render.dim, self.dim)));
        }
        let mut tape = Tape::new();
        let (gv, lv) = (self.global.record(&mut tape), self.local.record(&mut tape));
        let g = tape.leaf(render.globals_tensor());
        let l = tape.leaf(render.locals_tensor());
        let ga = Mlp::forward(&mut tape, &gv, g);
        let la = Mlp::forward(&mut tape, &lv, l);
        tape.check().map_err(|_| Error::ZeroNorm("aligned feature".into()))?;
        FeatureSet::new(
            Modality::Aligned,
            render.grid,
            render.dim,
            tape.value(ga).to_f32(),
            tape.value(la).to_f32(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: usize, d: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for _ in 0..rows {
            let v: Vec<f64> = (0..d).map(|_| n.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.extend(v.iter().map(|x| (x / norm) as f32));
        }
        out
    }

    #[test]
    fn fresh_aligner_is_identity() {
        let fs = FeatureSet::new(Modality::Render, (2, 2), 6, unit_rows(3, 6, 1), unit_rows(12, 6, 2)).unwrap();
        let out = AlignerParams::new(6, 5, 9).unwrap().align(&fs).unwrap();
        assert_eq!(out.modality, Modality::Aligned);
        for (a, b) in out.globals.iter().chain(&out.locals).zip(fs.globals.iter().chain(&fs.locals)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_modality_and_dimension() {
        let a = AlignerParams::new(6, 6, 0).unwrap();
        let rgb = FeatureSet::new(Modality::Rgb, (1, 1), 6, unit_rows(1, 6, 3), unit_rows(1, 6, 4)).unwrap();
        assert!(a.align(&rgb).is_err());
        let small = FeatureSet::new(Modality::Render, (1, 1), 4, unit_rows(1, 4, 3), unit_rows(1, 4, 4)).unwrap();
        assert!(a.align(&small).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = AlignerParams::new(4, 3, 5).unwrap();
        a.global.params[4].value.data_mut()[0] = 0.25;
        let back = AlignerParams::from_checkpoint(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.hidden, 3);
        assert_eq!(back.global.params[4].value.data()[0], 0.25);
        let names: Vec<String> = back.global.params.iter().chain(&back.local.params).map(|p| p.name.clone()).collect();
        assert!(names.iter().all(|n| n.starts_with("aligner.g.") || n.starts_with("aligner.l.")));
    }
}
