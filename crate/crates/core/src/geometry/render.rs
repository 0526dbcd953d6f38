use rayon::prelude::*;

use super::{PointCloud, View, ViewBundle, ViewSpec};
use crate::error::{Error, Result};

/// Direction towards the light in camera coordinates (x right, y up, z towards the viewer).
pub const LIGHT_DIR: [f64; 3] = [-0.4, 0.5, 1.0];
const AMBIENT: f64 = 0.1;
/// Neighbour search reach, in pixels, for depth finite differences.
const REACH: usize = 2;
/// Depth steps steeper than this slope (per unit of image-plane distance) are occlusion edges.
const MAX_SLOPE: f64 = 6.0;

/// Renders `cloud` from every angle in `spec` with no appearance channel.
pub fn make_views(cloud: &PointCloud, spec: &ViewSpec) -> Result<ViewBundle> {
    make_views_with_colors(cloud, spec, None)
}

/// Renders `cloud`; when `colors` is given each view also carries an RGB image of
/// per-point albedo modulated by the same shading as the grayscale render.
pub fn make_views_with_colors(
    cloud: &PointCloud,
    spec: &ViewSpec,
    colors: Option<&[[f32; 3]]>,
) -> Result<ViewBundle> {
    spec.validate(1)?;
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::shape(format!("{} colors for {} points", c.len(), cloud.len())));
        }
    }
    let normalized = normalize(cloud)?;
    let views = spec
        .angles
        .par_iter()
        .map(|&angle| render_view(&normalized, angle, spec, colors))
        .collect();
    Ok(ViewBundle { height: spec.height, width: spec.width, point_count: cloud.len(), views })
}

/// Centers on the bounding-box center and scales the farthest point to radius 1.
fn normalize(cloud: &PointCloud) -> Result<Vec<[f64; 3]>> {
    let pts = cloud.points();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for k in 0..3 {
            let v = f64::from(p[k]);
            if !v.is_finite() {
                return Err(Error::invalid("non-finite point coordinate"));
            }
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let radius = pts
        .iter()
        .map(|p| {
            (0..3)
                .map(|k| (f64::from(p[k]) - center[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let radius = if radius > 0.0 {
        radius
    } else if pts.len() == 1 {
        1.0
    } else {
        return Err(Error::DegenerateGeometry(format!("all {} points coincide", pts.len())));
    };
    Ok(pts
        .iter()
        .map(|p| {
            [
                (f64::from(p[0]) - center[0]) / radius,
                (f64::from(p[1]) - center[1]) / radius,
                (f64::from(p[2]) - center[2]) / radius,
            ]
        })
        .collect())
}

fn render_view(pts: &[[f64; 3]], angle: f64, spec: &ViewSpec, colors: Option<&[[f32; 3]]>) -> View {
    let (h, w) = (spec.height, spec.width);
    let (s, c) = angle.sin_cos();
    let mut depth = vec![f64::NEG_INFINITY; h * w];
    let mut owner: Vec<Option<u32>> = vec![None; h * w];
    // Image-plane position of each pixel's owner, for finite differences.
    let mut plane = vec![[0.0f64; 2]; h * w];

    for (i, p) in pts.iter().enumerate() {
        // Rotation about X; the camera sits on +z looking down -z.
        let x = p[0];
        let y = c * p[1] - s * p[2];
        let z = s * p[1] + c * p[2];
        let col = ((x * spec.scale + 1.0) * 0.5 * w as f64).floor();
        let row = ((1.0 - y * spec.scale) * 0.5 * h as f64).floor();
        if col < 0.0 || row < 0.0 || col >= w as f64 || row >= h as f64 {
            continue;
        }
        let px = row as usize * w + col as usize;
        if z > depth[px] {
            depth[px] = z;
            owner[px] = Some(i as u32);
            plane[px] = [x, y];
        }
    }

    let mut point_to_pixel = vec![None; pts.len()];
    for (px, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            point_to_pixel[*i as usize] = Some(px as u32);
        }
    }

    // Image-plane distance between adjacent pixel centers, in normalized units.
    let step = 2.0 / (spec.scale * w.max(h) as f64);
    let surf = Surface { depth: &depth, owner: &owner, plane: &plane, w, h };
    let light = {
        let n = LIGHT_DIR.iter().map(|v| v * v).sum::<f64>().sqrt();
        [LIGHT_DIR[0] / n, LIGHT_DIR[1] / n, LIGHT_DIR[2] / n]
    };

    let mut shade = vec![0.0f64; h * w];
    for r in 0..h {
        for col in 0..w {
            let px = r * w + col;
            if owner[px].is_none() {
                continue;
            }
            let [dzdx, dzdy] = surf.gradient(r, col, step);
            let n = [-dzdx, -dzdy, 1.0];
            let norm = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
            let lambert = ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / norm).max(0.0);
            shade[px] = AMBIENT + (1.0 - AMBIENT) * lambert;
        }
    }

    let render = shade.iter().map(|&v| v as f32).collect();
    let rgb = colors.map(|colors| {
        let mut planes = vec![0.0f32; 3 * h * w];
        for (px, o) in owner.iter().enumerate() {
            if let Some(i) = o {
                let albedo = colors[*i as usize];
                for ch in 0..3 {
                    planes[ch * h * w + px] = (f64::from(albedo[ch]) * shade[px]).clamp(0.0, 1.0) as f32;
                }
            }
        }
        planes
    });

    View { angle, render, rgb, pixel_to_point: owner, point_to_pixel }
}

struct Surface<'a> {
    depth: &'a [f64],
    owner: &'a [Option<u32>],
    plane: &'a [[f64; 2]],
    w: usize,
    h: usize,
}

impl Surface<'_> {
    /// Depth gradient `(dz/dx, dz/dy)` at pixel `(r, c)`: least-squares plane through the
    /// owning points of same-surface neighbours within `REACH` pixels, at their exact
    /// projected positions. Neighbours further than `MAX_SLOPE` in depth per unit distance
    /// belong to another surface.
    fn gradient(&self, r: usize, c: usize, step: f64) -> [f64; 2] {
        let here = r * self.w + c;
        let (z0, [x0, y0]) = (self.depth[here], self.plane[here]);
        let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let reach = REACH as isize;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if (dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= self.h as isize || cc >= self.w as isize {
                    continue;
                }
                let px = rr as usize * self.w + cc as usize;
                if self.owner[px].is_none() {
                    continue;
                }
                let (dx, dy) = (self.plane[px][0] - x0, self.plane[px][1] - y0);
                let dz = self.depth[px] - z0;
                let dist = (dx * dx + dy * dy).sqrt().max(0.5 * step);
                if dz.abs() > MAX_SLOPE * dist {
                    continue;
                }
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
                sxz += dx * dz;
                syz += dy * dz;
            }
        }
        let det = sxx * syy - sxy * sxy;
        if det <= 1e-3 * step.powi(4) {
            return [0.0, 0.0];
        }
        [(syy * sxz - sxy * syz) / det, (sxx * syz - sxy * sxz) / det]
    }
}
