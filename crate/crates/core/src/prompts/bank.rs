use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Checkpoint, Parameter, Tensor};
use crate::encoder::Modality;
use crate::error::{Error, Result};

/// Scoring branch: RGB-aligned (`r_a`) or raw rendering (`r`) features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Aligned,
    Render,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Aligned, Branch::Render];

    pub fn tag(self) -> &'static str {
        match self {
            Branch::Aligned => "ra",
            Branch::Render => "r",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Branch::Aligned => Modality::Aligned,
            Branch::Render => Modality::Render,
        }
    }

    pub fn other(self) -> Branch {
        match self {
            Branch::Aligned => Branch::Render,
            Branch::Render => Branch::Aligned,
        }
    }

    fn index(self) -> usize {
        match self {
            Branch::Aligned => 0,
            Branch::Render => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Normal,
    Anomalous,
}

impl State {
    pub const ALL: [State; 2] = [State::Normal, State::Anomalous];

    pub fn tag(self) -> &'static str {
        match self {
            State::Normal => "N",
            State::Anomalous => "A",
        }
    }

    fn index(self) -> usize {
        match self {
            State::Normal => 0,
            State::Anomalous => 1,
        }
    }
}

/// Learnable unit-norm prompt embeddings `T[m][s]` and the temperature τ.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank {
    pub dim: usize,
    pub tau: f64,
    /// Context tokens per prompt. Recorded for bookkeeping; embeddings are learned directly.
    pub prompt_length: usize,
    /// Ordered `ra.N, ra.A, r.N, r.A`.
    pub params: Vec<Parameter>,
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroNorm("prompt embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

impl PromptBank {
    pub fn new(dim: usize, tau: f64, prompt_length: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("prompt dimension must be ≥ 2, got {dim}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut params = Vec::with_capacity(4);
        for b in Branch::ALL {
            for s in [State::Normal, State::Anomalous] {
                let v = unit((0..dim).map(|_| n.sample(&mut rng)).collect())?;
                params.push(Parameter::new(Self::name(b, s), Tensor::vector(v)));
            }
        }
        Ok(Self { dim, tau, prompt_length, params })
    }

    pub fn name(branch: Branch, state: State) -> String {
        format!("prompt.{}.{}", branch.tag(), state.tag())
    }

    pub(crate) fn slot(branch: Branch, state: State) -> usize {
        branch.index() * 2 + state.index()
    }

    pub fn prompt(&self, branch: Branch, state: State) -> &[f64] {
        self.params[Self::slot(branch, state)].value.data()
    }

    /// Replaces one embedding with `v / ‖v‖`.
    pub fn set(&mut self, branch: Branch, state: State, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape(format!("prompt of length {} for d={}", v.len(), self.dim)));
        }
        self.params[Self::slot(branch, state)].value = Tensor::vector(unit(v)?);
        Ok(())
    }

    /// Projects every embedding back onto the unit sphere. Rows already unit to
    /// within rounding are left bit-for-bit untouched.
    pub fn renormalize(&mut self) -> Result<()> {
        for p in &mut self.params {
            let norm = p.value.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                continue;
            }
            let v = unit(p.value.data().to_vec())?;
            p.value.data_mut().copy_from_slice(&v);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_parameters(&self.params);
        ck.insert("prompt.tau", Tensor::scalar(self.tau));
        ck.insert("prompt.length", Tensor::scalar(self.prompt_length as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let first = ck.require(&Self::name(Branch::Aligned, State::Normal))?;
        let tau = ck.require("prompt.tau")?.item();
        let length = ck.get("prompt.length").map_or(0, |t| t.item() as usize);
        let mut bank = Self::new(first.len(), tau, length, 0)?;
        ck.restore_parameters(&mut bank.params)?;
        bank.renormalize()?;
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_start_unit_and_named() {
        let b = PromptBank::new(8, 0.07, 12, 3).unwrap();
        for p in &b.params {
            let n: f64 = p.value.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let names: Vec<&str> = b.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["prompt.ra.N", "prompt.ra.A", "prompt.r.N", "prompt.r.A"]);
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(PromptBank::new(8, 0.0, 12, 0).is_err());
        assert!(PromptBank::new(8, -1.0, 12, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = PromptBank::new(6, 0.07, 12, 1).unwrap();
        let back = PromptBank::from_checkpoint(&Checkpoint::from_bytes(&b.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.prompt_length, 12);
        assert!((back.tau - 0.07).abs() < 1e-7);
        for (x, y) in back.prompt(Branch::Render, State::Anomalous).iter().zip(b.prompt(Branch::Render, State::Anomalous)) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
