use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        if g.len() != self.value.len() {
            return Err(Error::shape(format!(
                "gradient for `{}` has {} values, parameter has {}",
                self.name,
                g.len(),
                self.value.len()
            )));
        }
        self.grad.add_assign(g);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::invalid(format!("Adam betas must lie in [0,1): {beta1}, {beta2}")));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("Adam eps must be > 0, got {eps}")));
        }
        Ok(Self { lr, beta1, beta2, eps })
    }

    /// One bias-corrected Adam update from the gradient stored on `p`.
    pub fn step(&self, p: &mut Parameter) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !p.grad.is_finite() {
            return Err(Error::NumericalOverflow(format!("gradient of `{}`", p.name)));
        }
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let g = p.grad.data();
        let m = p.first_moment.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
        }
        let v = p.second_moment.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
        }
        let (m, v) = (p.first_moment.data(), p.second_moment.data());
        let lr = self.lr;
        let eps = self.eps;
        for ((x, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.value.is_finite() {
            return Err(Error::NumericalOverflow(format!("Adam update of `{}`", p.name)));
        }
        Ok(())
    }
}
