use rayon::prelude::*;

use crate::error::{Error, Result};

fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    (0..3).map(|k| (f64::from(a[k]) - f64::from(b[k])).powi(2)).sum()
}

/// Median over points of the distance to the nearest other point.
pub fn median_nn_distance(points: &[[f32; 3]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("nearest-neighbour distance needs at least two points"));
    }
    let mut nn: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| dist2(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    Ok(if m % 2 == 1 { nn[m / 2] } else { 0.5 * (nn[m / 2 - 1] + nn[m / 2]) })
}

/// Connected components of the anomalous points under radius-graph connectivity,
/// with radius twice the median nearest-neighbour distance of the whole cloud.
pub fn radius_regions(points: &[[f32; 3]], labels: &[u8]) -> Result<Vec<Vec<usize>>> {
    if points.len() != labels.len() {
        return Err(Error::shape(format!("{} points with {} labels", points.len(), labels.len())));
    }
    let anomalous: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if anomalous.is_empty() {
        return Ok(Vec::new());
    }
    let radius = 2.0 * median_nn_distance(points)?;
    let r2 = radius * radius;
    let mut component = vec![usize::MAX; anomalous.len()];
    let mut regions = Vec::new();
    for seed in 0..anomalous.len() {
        if component[seed] != usize::MAX {
            continue;
        }
        let id = regions.len();
        component[seed] = id;
        let mut stack = vec![seed];
        let mut members = Vec::new();
        while let Some(a) = stack.pop() {
            members.push(anomalous[a]);
            for b in 0..anomalous.len() {
                if component[b] == usize::MAX && dist2(&points[anomalous[a]], &points[anomalous[b]]) <= r2 {
                    component[b] = id;
                    stack.push(b);
                }
            }
        }
        members.sort_unstable();
        regions.push(members);
    }
    Ok(regions)
}
