use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its pending gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Self { value, grad: None }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// The moment buffers are allocated on the first call and bound to the
    /// order and shapes of `params` from then on.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter {i} has no gradient")));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.value.shape())
        {
            return Err(Error::Contract(
                "parameter list changed shape between Adam steps".into(),
            ));
        }
        for p in params.iter() {
            let g = p.grad.as_ref().expect("checked above");
            if g.shape() != p.value.shape() {
                return Err(Error::dim(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            for (((x, &gi), mi), vi) in values.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
