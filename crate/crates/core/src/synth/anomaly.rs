use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::AnomalyKind;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Distance from `p` to the segment `a→b`.
fn segment_distance(p: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let t = (dot(&ap, &ab) / dot(&ab, &ab).max(1e-300)).clamp(0.0, 1.0);
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, &q).sqrt()
}

/// Indices of the `k` smallest keys, ties broken by index.
fn nearest(keys: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Smooth falloff in `[0.6, 1]`: 1 at the center, 0.6 at the rim.
fn profile(t: f64) -> f64 {
    0.6 + 0.4 * (1.0 - t * t)
}

/// Displaces `points[sel]` along their normals by `sign·depth·profile`, ranked by `keys`.
fn displace(points: &mut [[f64; 3]], normals: &[[f64; 3]], keys: &[f64], sel: &[usize], depth: f64) {
    let far = sel.iter().map(|&i| keys[i]).fold(0.0, f64::max).max(1e-12);
    for &i in sel {
        let h = depth * profile(keys[i] / far);
        for k in 0..3 {
            points[i][k] += h * normals[i][k];
        }
    }
}

/// Picks an anomaly center on a surface patch that is not edge-on to every view;
/// views rotate about X, so normals close to ±X are only ever seen at grazing angles.
fn pick_center(normals: &[[f64; 3]], rng: &mut ChaCha8Rng) -> usize {
    for _ in 0..64 {
        let i = rng.random_range(0..normals.len());
        if normals[i][0].abs() < 0.7 {
            return i;
        }
    }
    rng.random_range(0..normals.len())
}

/// Applies one anomaly in place; returns the kept point indices and per-kept-point labels.
pub(crate) fn inject(
    kind: AnomalyKind,
    points: &mut [[f64; 3]],
    normals: &[[f64; 3]],
    fraction: f64,
    depth: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<u8>) {
    let n = points.len();
    let count = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let center = points[pick_center(normals, rng)];
    let mut labels = vec![0u8; n];
    let mut keep = vec![true; n];
    match kind {
        AnomalyKind::Dent | AnomalyKind::Bump => {
            let keys: Vec<f64> = points.iter().map(|p| dist2(p, &center).sqrt()).collect();
            let sel = nearest(&keys, count);
            let sign = if kind == AnomalyKind::Dent { -1.0 } else { 1.0 };
            displace(points, normals, &keys, &sel, sign * depth);
            sel.iter().for_each(|&i| labels[i] = 1);
        }
        AnomalyKind::Crack => {
            // A short segment through the center, perpendicular to a random direction.
            let r = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let c = points.iter().position(|p| *p == center).unwrap_or(0);
            let nrm = normals[c];
            let mut t = [nrm[1] * r[2] - nrm[2] * r[1], nrm[2] * r[0] - nrm[0] * r[2], nrm[0] * r[1] - nrm[1] * r[0]];
            let len = dot(&t, &t).sqrt().max(1e-12);
            t.iter_mut().for_each(|v| *v /= len);
            let half = 0.45;
            let a = [center[0] - half * t[0], center[1] - half * t[1], center[2] - half * t[2]];
            let b = [center[0] + half * t[0], center[1] + half * t[1], center[2] + half * t[2]];
            let keys: Vec<f64> = points.iter().map(|p| segment_distance(p, &a, &b)).collect();
            let sel = nearest(&keys, count);
            displace(points, normals, &keys, &sel, -depth);
            sel.iter().for_each(|&i| labels[i] = 1);
        }
        AnomalyKind::MissingRegion => {
            let keys: Vec<f64> = points.iter().map(|p| dist2(p, &center).sqrt()).collect();
            let hole = (count / 2).max(1).min(n - 2);
            let ring = nearest(&keys, (hole + count).min(n - 1));
            for (j, &i) in ring.iter().enumerate() {
                if j < hole {
                    keep[i] = false;
                } else {
                    labels[i] = 1;
                }
            }
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let labels = kept.iter().map(|&i| labels[i]).collect();
    (kept, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sphere(n: usize) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| super::super::shapes::sphere(&mut rng).0).collect();
        (pts.clone(), pts)
    }

    #[test]
    fn label_counts_follow_fraction() {
        for kind in AnomalyKind::ALL {
            let (mut p, n) = sphere(1000);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let (kept, labels) = inject(kind, &mut p, &n, 0.1, 0.1, &mut rng);
            let pos = labels.iter().filter(|&&l| l == 1).count();
            assert_eq!(pos, 100, "{kind:?}");
            let expected_kept = if kind == AnomalyKind::MissingRegion { 950 } else { 1000 };
            assert_eq!(kept.len(), expected_kept);
        }
    }

    #[test]
    fn bump_moves_outward() {
        let (mut p, n) = sphere(500);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, labels) = inject(AnomalyKind::Bump, &mut p, &n, 0.05, 0.1, &mut rng);
        for (q, l) in p.iter().zip(&labels) {
            let r = dot(q, q).sqrt();
            if *l == 1 {
                assert!((1.06 - 1e-12..=1.1 + 1e-12).contains(&r));
            } else {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }
}
