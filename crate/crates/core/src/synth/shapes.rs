//! Area-uniform surface samplers returning `(point, outward unit normal)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) type Sample = ([f64; 3], [f64; 3]);

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

pub(crate) fn sphere(rng: &mut ChaCha8Rng) -> Sample {
    let n = unit_vector(rng);
    (n, n)
}

/// Ring of major radius `major` in the XZ plane swept by a circle of radius `minor`,
/// restricted to tube angles `phi ∈ [lo, hi]` (0 = outward, π/2 = +Y).
fn torus_patch(rng: &mut ChaCha8Rng, major: f64, minor: f64, lo: f64, hi: f64) -> Sample {
    let phi = loop {
        let phi = rng.random_range(lo..hi);
        // Surface element ∝ major + minor·cos φ.
        if rng.random_range(0.0..major + minor) <= major + minor * phi.cos() {
            break phi;
        }
    };
    let theta: f64 = rng.random_range(0.0..TAU);
    let n = [phi.cos() * theta.cos(), phi.sin(), phi.cos() * theta.sin()];
    let ring = [major * theta.cos(), 0.0, major * theta.sin()];
    ([ring[0] + minor * n[0], ring[1] + minor * n[1], ring[2] + minor * n[2]], n)
}

pub(crate) fn torus(rng: &mut ChaCha8Rng) -> Sample {
    torus_patch(rng, 0.7, 0.3, -PI, PI)
}

/// Box with half extents `half` dilated by a ball of radius `rho`.
pub(crate) fn rounded_box(rng: &mut ChaCha8Rng) -> Sample {
    let half = [0.75, 0.5, 0.4];
    let rho = 0.15;
    let face = |a: usize| 4.0 * half[(a + 1) % 3] * half[(a + 2) % 3];
    let edge = |a: usize| FRAC_PI_2 * rho * 2.0 * half[a];
    let corner = 4.0 * PI * rho * rho / 8.0;
    let faces: f64 = (0..3).map(|a| 2.0 * face(a)).sum();
    let edges: f64 = (0..3).map(|a| 4.0 * edge(a)).sum();
    let total = faces + edges + 8.0 * corner;
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut pick = rng.random_range(0.0..total);
    let mut core = [0.0; 3];
    let mut n = [0.0; 3];
    if pick < faces {
        let mut axis = 0;
        while pick >= 2.0 * face(axis) {
            pick -= 2.0 * face(axis);
            axis += 1;
        }
        let s = sign(rng);
        core[axis] = s * half[axis];
        for k in [(axis + 1) % 3, (axis + 2) % 3] {
            core[k] = rng.random_range(-half[k]..half[k]);
        }
        n[axis] = s;
    } else if pick < faces + edges {
        pick -= faces;
        let mut axis = 0;
        while pick >= 4.0 * edge(axis) {
            pick -= 4.0 * edge(axis);
            axis += 1;
        }
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (su, sv) = (sign(rng), sign(rng));
        let t: f64 = rng.random_range(0.0..FRAC_PI_2);
        core[axis] = rng.random_range(-half[axis]..half[axis]);
        core[u] = su * half[u];
        core[v] = sv * half[v];
        n[u] = su * t.cos();
        n[v] = sv * t.sin();
    } else {
        let d = unit_vector(rng);
        for k in 0..3 {
            core[k] = d[k].signum() * half[k];
            n[k] = d[k];
        }
    }
    ([core[0] + rho * n[0], core[1] + rho * n[1], core[2] + rho * n[2]], n)
}

/// Cylinder about Y with rounded rims.
pub(crate) fn rounded_cylinder(rng: &mut ChaCha8Rng) -> Sample {
    let (a, b, rho) = (0.45, 0.65, 0.15);
    let side = TAU * (a + rho) * 2.0 * b;
    let cap = PI * a * a;
    // Quarter-torus area: ∫_0^{π/2} 2π(a + ρ cos φ) ρ dφ.
    let rim = TAU * rho * (a * FRAC_PI_2 + rho);
    let total = side + 2.0 * cap + 2.0 * rim;
    let pick = rng.random_range(0.0..total);
    if pick < side {
        let theta: f64 = rng.random_range(0.0..TAU);
        let y = rng.random_range(-b..b);
        let n = [theta.cos(), 0.0, theta.sin()];
        ([(a + rho) * n[0], y, (a + rho) * n[2]], n)
    } else if pick < side + 2.0 * cap {
        let s = if pick < side + cap { 1.0 } else { -1.0 };
        let r = a * rng.random_range(0.0f64..1.0).sqrt();
        let theta: f64 = rng.random_range(0.0..TAU);
        ([r * theta.cos(), s * (b + rho), r * theta.sin()], [0.0, s, 0.0])
    } else {
        let upper = pick < side + 2.0 * cap + rim;
        let (p, n) = torus_patch(rng, a, rho, 0.0, FRAC_PI_2);
        let s = if upper { 1.0 } else { -1.0 };
        ([p[0], s * (p[1] + b), p[2]], [n[0], s * n[1], n[2]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn check(f: fn(&mut ChaCha8Rng) -> Sample) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let (p, n) = f(&mut rng);
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| v.is_finite() && v.abs() <= 1.2));
        }
    }

    #[test]
    fn samplers_give_unit_normals() {
        check(sphere);
        check(torus);
        check(rounded_box);
        check(rounded_cylinder);
    }

    #[test]
    fn torus_points_sit_on_tube() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (p, _) = torus(&mut rng);
            let ring = (p[0] * p[0] + p[2] * p[2]).sqrt();
            assert!((((ring - 0.7).powi(2) + p[1] * p[1]).sqrt() - 0.3).abs() < 1e-9);
        }
    }
}
