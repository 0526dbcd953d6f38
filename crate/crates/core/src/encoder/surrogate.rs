use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderKind, EncoderSpec};
use crate::error::{Error, Result};

/// Channels the surrogate consumes; grayscale inputs are replicated.
const CHANNELS: usize = 3;
const STATS: usize = 4;

/// Planar `C×H×W` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn gray(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::planar(1, height, width, data)
    }

    pub fn rgb(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::planar(3, height, width, data)
    }

    fn planar(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    fn at(&self, c: usize, r: usize, col: usize) -> f32 {
        let c = if self.channels == 1 { 0 } else { c };
        self.data[(c * self.height + r) * self.width + col]
    }
}

/// Frozen random-projection patch encoder.
///
/// Each patch becomes `W·[pixels, s·mean, s·std, s·min, s·max] + b`, L2-normalized;
/// the global feature is the normalized mean of the patch features.
#[derive(Clone, Debug)]
pub struct SurrogateEncoder {
    patch_size: usize,
    dim: usize,
    stats_weight: f64,
    /// Row-major `dim × input_len`.
    projection: Vec<f64>,
    bias: Vec<f64>,
}

impl SurrogateEncoder {
    pub fn new(spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let EncoderKind::Surrogate { seed } = spec.kind else {
            return Err(Error::FeaturesMustBeLoaded);
        };
        let input_len = CHANNELS * spec.patch_size * spec.patch_size + STATS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, 1.0 / (input_len as f64).sqrt()).unwrap();
        let projection = (0..spec.dim * input_len).map(|_| w.sample(&mut rng)).collect();
        let b = Normal::new(0.0, 1.0 / (spec.dim as f64).sqrt()).unwrap();
        let bias = (0..spec.dim).map(|_| b.sample(&mut rng)).collect();
        Ok(Self { patch_size: spec.patch_size, dim: spec.dim, stats_weight: spec.stats_weight, projection, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn input_len(&self) -> usize {
        CHANNELS * self.patch_size * self.patch_size + STATS
    }

    pub fn grid_for(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let p = self.patch_size;
        if height == 0 || width == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
            return Err(Error::invalid(format!("image {height}x{width} not divisible by patch size {p}")));
        }
        Ok((height / p, width / p))
    }

    /// Un-normalized `W·x + b` for the patch at grid cell `(gr, gc)`.
    pub fn raw_patch_feature(&self, image: &Image, gr: usize, gc: usize) -> Vec<f64> {
        let x = self.patch_input(image, gr, gc);
        let n = self.input_len();
        (0..self.dim)
            .map(|k| {
                let row = &self.projection[k * n..(k + 1) * n];
                self.bias[k] + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn patch_input(&self, image: &Image, gr: usize, gc: usize) -> Vec<f64> {
        let p = self.patch_size;
        let mut x = Vec::with_capacity(self.input_len());
        for c in 0..CHANNELS {
            for r in 0..p {
                for col in 0..p {
                    x.push(f64::from(image.at(c, gr * p + r, gc * p + col)));
                }
            }
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = self.stats_weight;
        x.extend([s * mean, s * std, s * min, s * max]);
        x
    }

    /// Returns `(G: d, F: N×d)`, all rows unit-norm.
    pub fn encode(&self, image: &Image) -> Result<(Vec<f32>, Vec<f32>)> {
        if image.channels != 1 && image.channels != CHANNELS {
            return Err(Error::invalid(format!("unsupported channel count {}", image.channels)));
        }
        let (gh, gw) = self.grid_for(image.height, image.width)?;
        let mut locals = Vec::with_capacity(gh * gw * self.dim);
        let mut mean = vec![0.0f64; self.dim];
        for gr in 0..gh {
            for gc in 0..gw {
                let f = unit(self.raw_patch_feature(image, gr, gc))?;
                for (m, v) in mean.iter_mut().zip(&f) {
                    *m += v;
                }
                locals.extend(f.iter().map(|&v| v as f32));
            }
        }
        let global = unit(mean)?;
        Ok((global.iter().map(|&v| v as f32).collect(), locals))
    }

    /// `L` such that a per-pixel perturbation of at most `δ` moves every raw
    /// patch feature by at most `L·δ` in L2.
    ///
    /// Pixels and the mean/min/max statistics move by at most `δ` and the
    /// standard deviation is a seminorm, so it moves by at most `δ` as well.
    pub fn lipschitz_bound(&self) -> f64 {
        let n = self.input_len();
        let pixel_cols = n - STATS;
        (0..n)
            .map(|j| {
                let col_norm = (0..self.dim)
                    .map(|k| self.projection[k * n + j].powi(2))
                    .sum::<f64>()
                    .sqrt();
                if j < pixel_cols {
                    col_norm
                } else {
                    self.stats_weight * col_norm
                }
            })
            .sum()
    }
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroNorm("encoder output".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> SurrogateEncoder {
        SurrogateEncoder::new(&EncoderSpec { patch_size: 4, dim: 8, ..EncoderSpec::default() }).unwrap()
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn deterministic_for_identical_images() {
        let img = Image::gray(8, 12, (0..96).map(|i| (i as f32 * 0.37).sin().abs()).collect()).unwrap();
        assert_eq!(encoder().encode(&img).unwrap(), encoder().encode(&img).unwrap());
    }

    #[test]
    fn constant_zero_image_gives_identical_patches() {
        let img = Image::gray(8, 8, vec![0.0; 64]).unwrap();
        let (g, f) = encoder().encode(&img).unwrap();
        for patch in f.chunks(8) {
            assert_eq!(patch, &f[..8]);
        }
        for (a, b) in g.iter().zip(&f[..8]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn outputs_are_unit_norm() {
        let img = Image::rgb(8, 8, (0..192).map(|i| ((i * 7919) % 101) as f32 / 100.0).collect()).unwrap();
        let (g, f) = encoder().encode(&img).unwrap();
        assert!((norm(&g) - 1.0).abs() < 1e-6);
        for patch in f.chunks(8) {
            assert!((norm(patch) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_matches_replicated_rgb() {
        let gray: Vec<f32> = (0..64).map(|i| i as f32 / 64.0).collect();
        let rgb: Vec<f32> = gray.iter().chain(&gray).chain(&gray).copied().collect();
        let e = encoder();
        assert_eq!(
            e.encode(&Image::gray(8, 8, gray).unwrap()).unwrap(),
            e.encode(&Image::rgb(8, 8, rgb).unwrap()).unwrap()
        );
    }

    #[test]
    fn different_seeds_differ() {
        let img = Image::gray(4, 4, vec![0.5; 16]).unwrap();
        let a = SurrogateEncoder::new(&EncoderSpec { patch_size: 4, dim: 8, kind: EncoderKind::Surrogate { seed: 1 }, stats_weight: 1.0 }).unwrap();
        let b = SurrogateEncoder::new(&EncoderSpec { patch_size: 4, dim: 8, kind: EncoderKind::Surrogate { seed: 2 }, stats_weight: 1.0 }).unwrap();
        assert_ne!(a.encode(&img).unwrap(), b.encode(&img).unwrap());
    }
}
