use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::FeatureSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignLosses {
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

/// `mean_i (1 − ⟨a_i, b_i⟩)` over rows.
pub fn global_loss(tape: &mut Tape, aligned: Var, target: Var) -> Var {
    let cos = tape.cosine_rows(aligned, target);
    let residual = tape.rsub_scalar(1.0, cos);
    tape.mean(residual)
}

/// Patch loss over all `V·N` rows, optionally weighted per row.
pub fn local_loss(tape: &mut Tape, aligned: Var, target: Var, weights: Option<Var>) -> Var {
    let cos = tape.cosine_rows(aligned, target);
    let residual = tape.rsub_scalar(1.0, cos);
    match weights {
        Some(w) => {
            let weighted = tape.mul(w, residual);
            tape.mean(weighted)
        }
        None => tape.mean(residual),
    }
}

/// Records `w = 1 + λ·σ(rowmean(F_r,i F_R,iᵀ))` for stacked `[V·N, d]` inputs.
pub(crate) fn record_scr_weights(
    tape: &mut Tape,
    render: Var,
    rgb: Var,
    patches: usize,
    lambda: f64,
    normalize: bool,
) -> Var {
    let rows = tape.shape(render)[0];
    let (render, rgb) = if normalize {
        (tape.normalize_rows(render), tape.normalize_rows(rgb))
    } else {
        (render, rgb)
    };
    let avg = tape.constant(Tensor::full(&[patches, 1], 1.0 / patches as f64));
    let mut parts = Vec::with_capacity(rows / patches);
    for start in (0..rows).step_by(patches) {
        let fr = tape.slice_rows(render, start, start + patches);
        let fg = tape.slice_rows(rgb, start, start + patches);
        let fgt = tape.transpose(fg);
        let c = tape.matmul(fr, fgt);
        parts.push(tape.matmul(c, avg));
    }
    let c = tape.concat(&parts);
    let c = tape.reshape(c, &[rows]);
    let s = tape.sigmoid(c);
    let s = tape.scale(s, lambda);
    tape.add_scalar(s, 1.0)
}

/// `C = F_r F_Rᵀ` for one view (`N×d` each); rows are unit-normalized first when `normalize` is set.
pub fn consistency_matrix(render: &[f32], rgb: &[f32], dim: usize, normalize: bool) -> Result<Vec<f64>> {
    if dim == 0 || render.len() != rgb.len() || !render.len().is_multiple_of(dim) {
        return Err(Error::shape(format!(
            "consistency inputs of {} and {} values with d={dim}",
            render.len(),
            rgb.len()
        )));
    }
    let rows = |x: &[f32]| -> Result<Vec<Vec<f64>>> {
        x.chunks(dim)
            .map(|r| {
                let v: Vec<f64> = r.iter().map(|&a| f64::from(a)).collect();
                if !normalize {
                    return Ok(v);
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::ZeroNorm("patch feature".into()));
                }
                Ok(v.into_iter().map(|a| a / norm).collect())
            })
            .collect()
    };
    let (a, b) = (rows(render)?, rows(rgb)?);
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ra in &a {
        for rb in &b {
            out.push(ra.iter().zip(rb).map(|(x, y)| x * y).sum());
        }
    }
    Ok(out)
}

/// Row means `c` of an `N×N` consistency matrix and weights `w = 1 + λ·σ(c)`.
pub fn scr_weights(c_matrix: &[f64], patches: usize, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if patches == 0 || c_matrix.len() != patches * patches {
        return Err(Error::shape(format!("{} values do not form a {patches}x{patches} matrix", c_matrix.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ must be ≥ 0, got {lambda}")));
    }
    let c: Vec<f64> = c_matrix.chunks(patches).map(|r| r.iter().sum::<f64>() / patches as f64).collect();
    let w = c.iter().map(|&x| 1.0 + lambda * crate::autodiff::sigmoid(x)).collect();
    Ok((c, w))
}

fn check_pair(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    a.check_compatible(b)?;
    for fs in [a, b] {
        for row in fs.globals.chunks(fs.dim).chain(fs.locals.chunks(fs.dim)) {
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroNorm(format!("{} feature row", fs.modality.name())));
            }
        }
    }
    Ok(())
}

fn evaluate(aligned: &FeatureSet, rgb: &FeatureSet, weights: Option<(&FeatureSet, f64, bool)>) -> Result<AlignLosses> {
    check_pair(aligned, rgb)?;
    let mut tape = Tape::new();
    let ga = tape.leaf(aligned.globals_tensor());
    let gr = tape.leaf(rgb.globals_tensor());
    let la = tape.leaf(aligned.locals_tensor());
    let lr = tape.leaf(rgb.locals_tensor());
    let w = match weights {
        Some((render, lambda, normalize)) => {
            check_pair(render, rgb)?;
            let fr = tape.leaf(render.locals_tensor());
            Some(record_scr_weights(&mut tape, fr, lr, render.patches(), lambda, normalize))
        }
        None => None,
    };
    let g = global_loss(&mut tape, ga, gr);
    let l = local_loss(&mut tape, la, lr, w);
    tape.check()?;
    let (global, local) = (tape.scalar(g), tape.scalar(l));
    Ok(AlignLosses { global, local, total: global + local })
}

/// `(L_g, L_l, L_align)`.
pub fn loss_align(aligned: &FeatureSet, rgb: &FeatureSet) -> Result<AlignLosses> {
    evaluate(aligned, rgb, None)
}

/// `(L_g, L_l^w, L_align^w)` with SCR weights from the raw rendering features.
pub fn loss_align_weighted(
    aligned: &FeatureSet,
    rgb: &FeatureSet,
    render: &FeatureSet,
    lambda: f64,
    normalize: bool,
) -> Result<AlignLosses> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ must be ≥ 0, got {lambda}")));
    }
    evaluate(aligned, rgb, Some((render, lambda, normalize)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Modality;

    fn set(m: Modality, g: Vec<f32>, l: Vec<f32>, d: usize) -> FeatureSet {
        FeatureSet::new(m, (1, l.len() / g.len()), d, g, l).unwrap()
    }

    #[test]
    fn orthogonal_and_antiparallel_extremes() {
        let a = set(Modality::Aligned, vec![1.0, 0.0], vec![1.0, 0.0, 1.0, 0.0], 2);
        let b = set(Modality::Rgb, vec![0.0, 1.0], vec![0.0, 1.0, 0.0, -1.0], 2);
        let l = loss_align(&a, &b).unwrap();
        assert_eq!((l.global, l.local, l.total), (1.0, 1.0, 2.0));
        let c = set(Modality::Rgb, vec![-1.0, 0.0], vec![-1.0, 0.0, -1.0, 0.0], 2);
        assert_eq!(loss_align(&a, &c).unwrap().total, 4.0);
    }

    #[test]
    fn zero_row_is_rejected() {
        let a = set(Modality::Aligned, vec![1.0, 0.0], vec![0.0, 0.0], 2);
        let b = set(Modality::Rgb, vec![1.0, 0.0], vec![1.0, 0.0], 2);
        assert!(matches!(loss_align(&a, &b), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn scr_weight_values() {
        let (c, w) = scr_weights(&[0.0], 1, 1.0).unwrap();
        assert_eq!((c[0], w[0]), (0.0, 1.5));
        let (_, w) = scr_weights(&[1.0], 1, 1.0).unwrap();
        assert!((w[0] - (1.0 + 1.0 / (1.0 + (-1.0f64).exp()))).abs() < 1e-15);
        assert!((w[0] - 1.7311).abs() < 1e-4);
        let (_, w) = scr_weights(&[0.3, -0.2, 0.9, 0.1], 2, 0.0).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn single_patch_weighted_residual() {
        // cos = 0.6 so the residual is 0.4; render ⟂ rgb gives c = 0 and w = 1.5.
        let a = set(Modality::Aligned, vec![1.0, 0.0], vec![0.6, 0.8], 2);
        let rgb = set(Modality::Rgb, vec![1.0, 0.0], vec![1.0, 0.0], 2);
        let render = set(Modality::Render, vec![1.0, 0.0], vec![0.0, 1.0], 2);
        let l = loss_align_weighted(&a, &rgb, &render, 1.0, true).unwrap();
        assert!((l.local - 0.6).abs() < 1e-7);
        assert!(l.global.abs() < 1e-15);
    }

    #[test]
    fn orthonormal_consistency_is_identity() {
        let f = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(consistency_matrix(&f, &f, 3, true).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
