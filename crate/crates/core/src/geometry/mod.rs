//! Point clouds, multi-view orthographic rendering, and 2D↔3D correspondence.

mod io;
mod maps;
mod render;

use std::f64::consts::PI;

pub use maps::{back_project, back_projection_map, bilinear_map, upsample_bilinear, Averaging};
pub use render::{make_views, make_views_with_colors, LIGHT_DIR};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, labels: Option<Vec<u8>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud has no points"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite point coordinate"));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::shape(format!("{} labels for {} points", l.len(), points.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::invalid("point labels must be 0 or 1"));
            }
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn is_anomalous(&self) -> bool {
        self.labels.as_ref().is_some_and(|l| l.contains(&1))
    }
}

/// Camera setup shared by every view: rotations about the X axis and an orthographic frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSpec {
    pub angles: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Fraction of the half-image the unit-normalized cloud radius spans.
    pub scale: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self { angles: default_angles(9), height: 84, width: 84, scale: 0.9 }
    }
}

/// `count` angles symmetric about 0 with spacing `2π/(count+1)`; nine views give `{-4π/5, …, 4π/5}`.
pub fn default_angles(count: usize) -> Vec<f64> {
    let step = 2.0 * PI / (count as f64 + 1.0);
    let mid = (count as f64 - 1.0) / 2.0;
    (0..count).map(|k| (k as f64 - mid) * step).collect()
}

impl ViewSpec {
    pub fn with_view_count(count: usize) -> Self {
        Self { angles: default_angles(count), ..Self::default() }
    }

    pub fn view_count(&self) -> usize {
        self.angles.len()
    }

    pub fn validate(&self, min_size: usize) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::invalid("view spec needs at least one angle"));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite view angle"));
        }
        if self.height < min_size.max(1) || self.width < min_size.max(1) {
            return Err(Error::invalid(format!(
                "image {}x{} smaller than {min_size}",
                self.height, self.width
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("orthographic scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// One rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub angle: f64,
    /// Lambertian-shaded grayscale, `H×W`, 0 where nothing projects.
    pub render: Vec<f32>,
    /// Optional appearance image, planar `3×H×W`.
    pub rgb: Option<Vec<f32>>,
    /// Frontmost point index per pixel.
    pub pixel_to_point: Vec<Option<u32>>,
    /// Pixel owned by each point, if it won its depth test.
    pub point_to_pixel: Vec<Option<u32>>,
}

impl View {
    /// Visibility mask `H_i`.
    pub fn mask(&self) -> Vec<u8> {
        self.pixel_to_point.iter().map(|p| u8::from(p.is_some())).collect()
    }

    pub fn visible_count(&self) -> usize {
        self.pixel_to_point.iter().filter(|p| p.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewBundle {
    pub height: usize,
    pub width: usize,
    pub point_count: usize,
    pub views: Vec<View>,
}

impl ViewBundle {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn has_rgb(&self) -> bool {
        self.views.iter().all(|v| v.rgb.is_some())
    }

    /// Number of views in which each point owns a pixel.
    pub fn visibility_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.point_count];
        for v in &self.views {
            for (c, px) in counts.iter_mut().zip(&v.point_to_pixel) {
                *c += u32::from(px.is_some());
            }
        }
        counts
    }
}

/// Image-level label plus per-view 2D masks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub label: bool,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<u8>>,
}

impl MaskSet {
    /// `max{Y_i}` per view.
    pub fn view_labels(&self) -> Vec<bool> {
        self.masks.iter().map(|m| m.contains(&1)).collect()
    }

    /// Masks max-pooled to a `grid_h × grid_w` patch grid.
    pub fn pooled(&self, grid_h: usize, grid_w: usize) -> Result<Vec<Vec<u8>>> {
        if !self.height.is_multiple_of(grid_h) || !self.width.is_multiple_of(grid_w) {
            return Err(Error::shape(format!(
                "{}x{} masks do not tile into a {grid_h}x{grid_w} grid",
                self.height, self.width
            )));
        }
        let (ph, pw) = (self.height / grid_h, self.width / grid_w);
        Ok(self
            .masks
            .iter()
            .map(|m| {
                let mut out = vec![0u8; grid_h * grid_w];
                for r in 0..self.height {
                    for c in 0..self.width {
                        if m[r * self.width + c] == 1 {
                            out[(r / ph) * grid_w + c / pw] = 1;
                        }
                    }
                }
                out
            })
            .collect())
    }
}

/// Projects point labels onto each view: `Y_i(p) = Y(pixel_to_point(p))`, 0 where empty.
pub fn project_labels(cloud: &PointCloud, views: &ViewBundle) -> Result<MaskSet> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::MissingLabels("point cloud carries no labels".into()))?;
    if views.point_count != cloud.len() {
        return Err(Error::shape(format!(
            "views rendered from {} points, cloud has {}",
            views.point_count,
            cloud.len()
        )));
    }
    let masks = views
        .views
        .iter()
        .map(|v| {
            v.pixel_to_point
                .iter()
                .map(|p| p.map_or(0, |i| labels[i as usize]))
                .collect()
        })
        .collect();
    Ok(MaskSet {
        label: labels.contains(&1),
        height: views.height,
        width: views.width,
        masks,
    })
}
