//! "A3CK" named-tensor checkpoints.
//!
//! Layout: magic `A3CK`, version u32, tensor count u32, then per tensor
//! name length u32, UTF-8 name, rank u32, rank × u64 dims, float32 values.
//! All integers and floats are little-endian.

use std::path::Path;

use super::optim::Parameter;
use super::tensor::Tensor;
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"A3CK";
const VERSION: u32 = 1;

const MOMENT1: &str = ".adam_m";
const MOMENT2: &str = ".adam_v";
const STEP: &str = ".adam_step";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::format("A3CK", format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Stores parameter values together with their Adam state.
    pub fn add_parameters(&mut self, params: &[Parameter]) {
        for p in params {
            self.insert(p.name.clone(), p.value.clone());
            self.insert(format!("{}{MOMENT1}", p.name), p.first_moment.clone());
            self.insert(format!("{}{MOMENT2}", p.name), p.second_moment.clone());
            self.insert(format!("{}{STEP}", p.name), Tensor::scalar(p.step as f64));
        }
    }

    /// Restores values (and optimizer state when present) into `params` by name.
    pub fn restore_parameters(&self, params: &mut [Parameter]) -> Result<()> {
        for p in params.iter_mut() {
            let value = self.require(&p.name)?;
            if value.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
            p.zero_grad();
            match (
                self.get(&format!("{}{MOMENT1}", p.name)),
                self.get(&format!("{}{MOMENT2}", p.name)),
                self.get(&format!("{}{STEP}", p.name)),
            ) {
                (Some(m), Some(v), Some(s)) if m.shape() == p.value.shape() && v.shape() == p.value.shape() => {
                    p.first_moment = m.clone();
                    p.second_moment = v.clone();
                    p.step = s.item() as u64;
                }
                _ => {
                    p.first_moment = Tensor::zeros(p.value.shape());
                    p.second_moment = Tensor::zeros(p.value.shape());
                    p.step = 0;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(&t.to_f32());
        }
        w.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("A3CK", data);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| r.err("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.usize_from_u64("dimension")?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err("tensor size overflow"))?;
            let values = r.f32s(n)?;
            ck.tensors.push((name, Tensor::from_f32(shape, &values)?));
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.bytes(&self.to_bytes());
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
