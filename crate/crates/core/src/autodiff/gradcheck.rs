use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for relative errors so exactly-zero gradients compare cleanly.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)` over checked inputs.
    pub max_rel_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` records a scalar objective on a fresh tape from leaves holding
/// `inputs`. Only inputs flagged in `wrt` are perturbed.
pub fn check_gradients<F>(inputs: &[Tensor], wrt: &[bool], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.check()?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, analytic: Vec::new(), numeric: Vec::new() };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, &check) in wrt.iter().enumerate() {
        if !check {
            continue;
        }
        let analytic = grads.wrt(vars[i]);
        let mut numeric = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        let rel = relative_error(&analytic, &numeric);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(REL_FLOOR)
}
