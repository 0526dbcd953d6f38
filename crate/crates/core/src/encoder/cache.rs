//! "A3FC" feature cache.
//!
//! Layout (little-endian): magic `A3FC`, version u32, modality count u8, then per
//! modality: tag u8 (0 = RGB, 1 = rendering), V u32, N u32, d u32, and per view
//! the global vector (d float32) followed by the patch matrix (N×d float32).
//! External exporters write this format byte-for-byte.

use std::path::Path;

use super::{FeatureSet, Modality};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"A3FC";
const VERSION: u32 = 1;

fn tag(m: Modality) -> Result<u8> {
    match m {
        Modality::Rgb => Ok(0),
        Modality::Render => Ok(1),
        Modality::Aligned => Err(Error::invalid("aligned features are never cached")),
    }
}

fn square_grid(n: usize) -> Option<(usize, usize)> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some((s, s))
}

pub fn cache_to_bytes(sets: &[FeatureSet]) -> Result<Vec<u8>> {
    if sets.is_empty() || sets.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("cannot cache {} modalities", sets.len())));
    }
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(sets.len() as u8);
    for (k, fs) in sets.iter().enumerate() {
        fs.validate()?;
        if let Some(first) = sets.first() {
            if fs.patches() != first.patches() || fs.dim != first.dim || fs.views() != first.views() {
                return Err(Error::shape(format!(
                    "modality {k} has V={}, N={}, d={}; modality 0 has V={}, N={}, d={}",
                    fs.views(),
                    fs.patches(),
                    fs.dim,
                    first.views(),
                    first.patches(),
                    first.dim
                )));
            }
        }
        if sets[..k].iter().any(|o| o.modality == fs.modality) {
            return Err(Error::invalid(format!("modality {} appears twice", fs.modality.name())));
        }
        w.u8(tag(fs.modality)?);
        w.u32(fs.views() as u32);
        w.u32(fs.patches() as u32);
        w.u32(fs.dim as u32);
        for v in 0..fs.views() {
            w.f32s(fs.global(v));
            w.f32s(fs.local(v));
        }
    }
    Ok(w.into_inner())
}

pub fn cache_from_bytes(data: &[u8]) -> Result<Vec<FeatureSet>> {
    let mut r = Reader::new("A3FC", data);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u8()? as usize;
    if count == 0 {
        return Err(r.err("no modalities"));
    }
    let mut sets: Vec<FeatureSet> = Vec::with_capacity(count);
    for k in 0..count {
        let modality = match r.u8()? {
            0 => Modality::Rgb,
            1 => Modality::Render,
            t => return Err(r.err(format!("modality {k}: unknown tag {t}"))),
        };
        if sets.iter().any(|s| s.modality == modality) {
            return Err(r.err(format!("modality {} appears twice", modality.name())));
        }
        let v = r.u32()? as usize;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        if v == 0 || n == 0 || d == 0 {
            return Err(r.err(format!("modality {k}: empty geometry V={v}, N={n}, d={d}")));
        }
        if let Some(first) = sets.first() {
            if first.views() != v || first.patches() != n || first.dim != d {
                return Err(r.err(format!(
                    "modality {k} geometry V={v}, N={n}, d={d} disagrees with V={}, N={}, d={}",
                    first.views(),
                    first.patches(),
                    first.dim
                )));
            }
        }
        let grid = square_grid(n).ok_or_else(|| r.err(format!("N={n} is not a square patch grid")))?;
        let mut globals = Vec::with_capacity(v * d);
        let mut locals = Vec::with_capacity(v * n * d);
        for _ in 0..v {
            globals.extend(r.f32s(d)?);
            locals.extend(r.f32s(n * d)?);
        }
        sets.push(FeatureSet::new(modality, grid, d, globals, locals)?);
    }
    r.finish()?;
    Ok(sets)
}

/// Writes all modalities for one sample.
pub fn save_cache(sets: &[FeatureSet], path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(&cache_to_bytes(sets)?);
    w.write_to(path)
}

pub fn load_cache(path: &Path) -> Result<Vec<FeatureSet>> {
    cache_from_bytes(&read_file(path)?)
}
