use super::ViewBundle;
use crate::autodiff::SparseMap;
use crate::error::{Error, Result};

/// How per-view scores are averaged onto a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Divide by the total view count `V`, visible or not.
    #[default]
    AllViews,
    /// Divide by the number of views in which the point is visible.
    VisibleViews,
}

fn corner_aligned(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if src_len == 1 || dst_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear interpolation from an `h×w` grid to `out_h×out_w` with corner-aligned sampling.
pub fn bilinear_map(h: usize, w: usize, out_h: usize, out_w: usize) -> Result<SparseMap> {
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape(format!("bilinear sizes must be positive: {h}x{w} -> {out_h}x{out_w}")));
    }
    let mut rows = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = corner_aligned(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = corner_aligned(x, w, out_w);
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
            for (idx, wt) in [
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ] {
                if wt == 0.0 {
                    continue;
                }
                match entries.iter_mut().find(|(i, _)| *i == idx) {
                    Some(e) => e.1 += wt,
                    None => entries.push((idx, wt)),
                }
            }
            rows.push(entries);
        }
    }
    SparseMap::from_rows(h * w, rows)
}

pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if map.len() != h * w {
        return Err(Error::shape(format!("map has {} values, expected {h}x{w}", map.len())));
    }
    Ok(bilinear_map(h, w, out_h, out_w)?.apply(map))
}

/// Linear map from stacked per-view pixel maps (`V·H·W`) to per-point scores.
pub fn back_projection_map(views: &ViewBundle, averaging: Averaging) -> Result<SparseMap> {
    let v = views.view_count();
    if v == 0 {
        return Err(Error::shape("view bundle has no views"));
    }
    let hw = views.pixels();
    let counts = views.visibility_counts();
    let rows = (0..views.point_count)
        .map(|p| {
            let denom = match averaging {
                Averaging::AllViews => v as f64,
                Averaging::VisibleViews => f64::from(counts[p].max(1)),
            };
            views
                .views
                .iter()
                .enumerate()
                .filter_map(|(i, view)| view.point_to_pixel[p].map(|px| (i * hw + px as usize, 1.0 / denom)))
                .collect()
        })
        .collect();
    SparseMap::from_rows(v * hw, rows)
}

/// `M = (1/V) Σ_i R_i⁻¹(map_i) ⊙ H_i`: every point reads its own pixel in each view where it is visible.
pub fn back_project(maps: &[Vec<f64>], views: &ViewBundle, averaging: Averaging) -> Result<Vec<f64>> {
    if maps.len() != views.view_count() {
        return Err(Error::shape(format!("{} score maps for {} views", maps.len(), views.view_count())));
    }
    let hw = views.pixels();
    if let Some(bad) = maps.iter().find(|m| m.len() != hw) {
        return Err(Error::shape(format!("score map has {} pixels, views have {hw}", bad.len())));
    }
    let flat: Vec<f64> = maps.iter().flatten().copied().collect();
    Ok(back_projection_map(views, averaging)?.apply(&flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::View;

    #[test]
    fn constant_map_stays_constant() {
        let up = upsample_bilinear(&[0.7; 6], 2, 3, 7, 5).unwrap();
        assert!(up.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn equal_size_is_identity() {
        let m: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(upsample_bilinear(&m, 3, 4, 3, 4).unwrap(), m);
    }

    #[test]
    fn two_by_two_to_two_by_four() {
        // Corner-aligned: output column x samples source column x·(2-1)/(4-1).
        let up = upsample_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 2, 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in up.chunks(4) {
            for (a, b) in row.iter().zip(expected) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    fn bundle(owners: Vec<Vec<Option<u32>>>, points: usize) -> ViewBundle {
        let views = owners
            .into_iter()
            .map(|pixel_to_point| {
                let mut point_to_pixel = vec![None; points];
                for (px, o) in pixel_to_point.iter().enumerate() {
                    if let Some(i) = o {
                        point_to_pixel[*i as usize] = Some(px as u32);
                    }
                }
                View { angle: 0.0, render: vec![0.0; pixel_to_point.len()], rgb: None, pixel_to_point, point_to_pixel }
            })
            .collect();
        ViewBundle { height: 2, width: 2, point_count: points, views }
    }

    #[test]
    fn back_projection_examples() {
        let b = bundle(vec![vec![Some(0), None, None, None]], 2);
        let s = back_project(&[vec![0.9, 5.0, 5.0, 5.0]], &b, Averaging::AllViews).unwrap();
        assert_eq!(s, vec![0.9, 0.0]);

        let b = bundle(vec![vec![Some(0), None, None, None], vec![None, None, Some(0), None]], 1);
        let s = back_project(&[vec![0.2; 4], vec![0.8; 4]], &b, Averaging::AllViews).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn visibility_normalized_divides_by_visible_count() {
        let b = bundle(vec![vec![Some(0), None, None, None], vec![None; 4]], 1);
        let maps = [vec![0.6; 4], vec![0.6; 4]];
        assert!((back_project(&maps, &b, Averaging::AllViews).unwrap()[0] - 0.3).abs() < 1e-15);
        assert!((back_project(&maps, &b, Averaging::VisibleViews).unwrap()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn wrong_map_count_is_shape_error() {
        let b = bundle(vec![vec![None; 4]], 1);
        assert!(back_project(&[], &b, Averaging::AllViews).is_err());
        assert!(back_project(&[vec![0.0; 3]], &b, Averaging::AllViews).is_err());
    }
}
