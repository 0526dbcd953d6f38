//! Vision-encoder contract: one global vector and an `N×d` patch matrix per view.

mod cache;
mod surrogate;

pub use cache::{load_cache, save_cache, cache_from_bytes, cache_to_bytes};
pub use surrogate::{Image, SurrogateEncoder};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::ViewBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Appearance images (training only).
    Rgb,
    /// Shaded geometry renders.
    Render,
    /// Render features mapped into the RGB feature space by the aligner.
    Aligned,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "R",
            Modality::Render => "r",
            Modality::Aligned => "r_a",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub modality: Modality,
    /// Patch grid `(n_h, n_w)`; `N = n_h·n_w`.
    pub grid: (usize, usize),
    pub dim: usize,
    /// `V×d`, row per view.
    pub globals: Vec<f32>,
    /// `V×N×d`, views stacked.
    pub locals: Vec<f32>,
}

impl FeatureSet {
    pub fn new(
        modality: Modality,
        grid: (usize, usize),
        dim: usize,
        globals: Vec<f32>,
        locals: Vec<f32>,
    ) -> Result<Self> {
        let fs = Self { modality, grid, dim, globals, locals };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::shape(format!("empty feature geometry: grid {:?}, d {}", self.grid, self.dim)));
        }
        if !self.globals.len().is_multiple_of(self.dim) {
            return Err(Error::shape(format!("{} global values not a multiple of d={}", self.globals.len(), self.dim)));
        }
        let v = self.globals.len() / self.dim;
        if v == 0 {
            return Err(Error::shape("feature set has no views"));
        }
        if self.locals.len() != v * self.patches() * self.dim {
            return Err(Error::shape(format!(
                "{} local values, expected V={v} × N={} × d={}",
                self.locals.len(),
                self.patches(),
                self.dim
            )));
        }
        if self.globals.iter().chain(&self.locals).any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite {} feature", self.modality.name())));
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        self.globals.len() / self.dim
    }

    pub fn patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn global(&self, view: usize) -> &[f32] {
        &self.globals[view * self.dim..(view + 1) * self.dim]
    }

    pub fn local(&self, view: usize) -> &[f32] {
        let n = self.patches() * self.dim;
        &self.locals[view * n..(view + 1) * n]
    }

    pub fn patch(&self, view: usize, n: usize) -> &[f32] {
        let start = (view * self.patches() + n) * self.dim;
        &self.locals[start..start + self.dim]
    }

    /// `[V, d]` in `f64`.
    pub fn globals_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.views(), self.dim], &self.globals).expect("validated shape")
    }

    /// `[V·N, d]` in `f64`.
    pub fn locals_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.views() * self.patches(), self.dim], &self.locals).expect("validated shape")
    }

    /// Errors unless `other` has the same views, patches, and dimension.
    pub fn check_compatible(&self, other: &FeatureSet) -> Result<()> {
        if self.views() != other.views() || self.grid != other.grid || self.dim != other.dim {
            return Err(Error::shape(format!(
                "{} features (V={}, grid {:?}, d={}) vs {} features (V={}, grid {:?}, d={})",
                self.modality.name(),
                self.views(),
                self.grid,
                self.dim,
                other.modality.name(),
                other.views(),
                other.grid,
                other.dim
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_SURROGATE_SEED: u64 = 0x5eed_a3d0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EncoderKind {
    /// Frozen seeded random projection of patch pixels and patch statistics.
    Surrogate { seed: u64 },
    /// Features come from an external encoder through A3FC cache files.
    Cached,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSpec {
    pub patch_size: usize,
    pub dim: usize,
    pub kind: EncoderKind,
    /// Multiplier on the (mean, std, min, max) block of the surrogate input.
    pub stats_weight: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            patch_size: 14,
            dim: 64,
            kind: EncoderKind::Surrogate { seed: DEFAULT_SURROGATE_SEED },
            stats_weight: 8.0,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!("feature dimension must be ≥ 2, got {}", self.dim)));
        }
        if !(self.stats_weight >= 0.0) {
            return Err(Error::invalid("stats weight must be ≥ 0"));
        }
        Ok(())
    }

    pub fn grid_for(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if !height.is_multiple_of(self.patch_size) || !width.is_multiple_of(self.patch_size) || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image {height}x{width} not divisible by patch size {}",
                self.patch_size
            )));
        }
        Ok((height / self.patch_size, width / self.patch_size))
    }
}

/// Encodes one image according to `spec`. Cached encoders cannot run here.
pub fn encode(image: &Image, spec: &EncoderSpec) -> Result<(Vec<f32>, Vec<f32>)> {
    match spec.kind {
        EncoderKind::Cached => Err(Error::FeaturesMustBeLoaded),
        EncoderKind::Surrogate { .. } => SurrogateEncoder::new(spec)?.encode(image),
    }
}

/// Encodes every view of a bundle as `modality` (`Render` or `Rgb`).
pub fn encode_views(encoder: &SurrogateEncoder, views: &ViewBundle, modality: Modality) -> Result<FeatureSet> {
    use rayon::prelude::*;
    let grid = encoder.grid_for(views.height, views.width)?;
    let per_view: Vec<(Vec<f32>, Vec<f32>)> = views
        .views
        .par_iter()
        .map(|v| {
            let image = match modality {
                Modality::Render => Image::gray(views.height, views.width, v.render.clone())?,
                Modality::Rgb => {
                    let planes = v.rgb.clone().ok_or_else(|| Error::invalid("view bundle has no RGB images"))?;
                    Image::rgb(views.height, views.width, planes)?
                }
                Modality::Aligned => return Err(Error::invalid("aligned features come from the aligner, not the encoder")),
            };
            encoder.encode(&image)
        })
        .collect::<Result<_>>()?;
    let mut globals = Vec::new();
    let mut locals = Vec::new();
    for (g, f) in per_view {
        globals.extend(g);
        locals.extend(f);
    }
    FeatureSet::new(modality, grid, encoder.dim(), globals, locals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cached_kind_cannot_encode() {
        let spec = EncoderSpec { kind: EncoderKind::Cached, ..EncoderSpec::default() };
        let img = Image::gray(14, 14, vec![0.0; 196]).unwrap();
        assert!(matches!(encode(&img, &spec), Err(Error::FeaturesMustBeLoaded)));
    }

    #[test]
    fn indivisible_image_rejected() {
        let spec = EncoderSpec::default();
        let img = Image::gray(15, 14, vec![0.0; 210]).unwrap();
        assert!(encode(&img, &spec).is_err());
    }

    #[test]
    fn feature_set_shape_checks() {
        assert!(FeatureSet::new(Modality::Render, (2, 2), 3, vec![0.0; 6], vec![0.0; 24]).is_ok());
        assert!(FeatureSet::new(Modality::Render, (2, 2), 3, vec![0.0; 6], vec![0.0; 23]).is_err());
        assert!(FeatureSet::new(Modality::Render, (2, 2), 3, vec![f32::NAN; 6], vec![0.0; 24]).is_err());
    }
}
