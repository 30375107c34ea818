use crate::error::{Error, Result};
use crate::ndgrad::{sigmoid, Tape, Var};

/// Coefficients of the Gabor-plus-sigmoid activation
/// `Φ(x) = exp(-(a1·x + b1)²)·sin(a2·x + b2) + 1 / (exp(-(a1·x + b1)) + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Default for PhiParams {
    fn default() -> Self {
        Self {
            a1: 2.0,
            b1: 0.0,
            a2: 3.0,
            b2: 0.0,
        }
    }
}

impl PhiParams {
    pub fn new(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<Self> {
        let p = Self { a1, b1, a2, b2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.a1, self.b1, self.a2, self.b2].iter().all(|v| v.is_finite()) {
            return Err(Error::config("activation coefficients must be finite"));
        }
        // a1 = 0 or a2 = 0 collapses a term to a constant
        if self.a1 == 0.0 || self.a2 == 0.0 {
            return Err(Error::config("activation needs a1 != 0 and a2 != 0"));
        }
        Ok(())
    }
}

/// Hidden-layer nonlinearity of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Phi(PhiParams),
    /// `sin(ω·x)`, with a separate frequency for the first hidden layer.
    Sine {
        first_omega: f64,
        hidden_omega: f64,
    },
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Phi(PhiParams::default())
    }
}

impl Activation {
    /// SIREN-style sine: ω = 30 on the first layer, 1 afterwards.
    pub fn siren() -> Self {
        Activation::Sine {
            first_omega: 30.0,
            hidden_omega: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Phi(_) => "phi",
            Activation::Sine { .. } => "sine",
            Activation::Relu => "relu",
        }
    }

    /// Scalar evaluation for hidden layer `layer` (0-based).
    pub fn eval(&self, x: f64, layer: usize) -> f64 {
        match *self {
            Activation::Phi(p) => phi(x, &p),
            Activation::Sine {
                first_omega,
                hidden_omega,
            } => {
                let w = if layer == 0 { first_omega } else { hidden_omega };
                (w * x).sin()
            }
            Activation::Relu => x.max(0.0),
        }
    }

    /// Records the activation of `x` on `tape`.
    pub fn record(&self, tape: &mut Tape, x: Var, layer: usize) -> Result<Var> {
        match *self {
            Activation::Phi(p) => tape.pointwise(x, |v| phi(v, &p), |v| phi_derivative(v, &p)),
            Activation::Sine {
                first_omega,
                hidden_omega,
            } => {
                let w = if layer == 0 { first_omega } else { hidden_omega };
                let s = tape.scale_shift(x, w, 0.0)?;
                tape.sin(s)
            }
            Activation::Relu => tape.relu(x),
        }
    }
}

pub fn phi(x: f64, p: &PhiParams) -> f64 {
    let t = p.a1 * x + p.b1;
    let envelope = (-t * t).exp();
    // sin of an overflowed phase is NaN; the envelope has already vanished there
    let gabor = if envelope == 0.0 {
        0.0
    } else {
        envelope * (p.a2 * x + p.b2).sin()
    };
    gabor + sigmoid(t)
}

/// Closed-form `dΦ/dx`.
pub fn phi_derivative(x: f64, p: &PhiParams) -> f64 {
    let t = p.a1 * x + p.b1;
    let s = p.a2 * x + p.b2;
    let envelope = (-t * t).exp();
    let gate = sigmoid(t);
    if envelope == 0.0 {
        return p.a1 * gate * (1.0 - gate);
    }
    -2.0 * p.a1 * t * envelope * s.sin() + p.a2 * envelope * s.cos() + p.a1 * gate * (1.0 - gate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PhiParams {
        PhiParams::new(1.0, 0.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn phi_at_zero() {
        assert_eq!(phi(0.0, &unit()), 0.5);
    }

    #[test]
    fn phi_limits() {
        assert!((phi(20.0, &unit()) - 1.0).abs() <= 1e-6);
        assert!(phi(-20.0, &unit()).abs() <= 1e-6);
    }

    #[test]
    fn derivative_at_zero() {
        assert_eq!(phi_derivative(0.0, &unit()), 1.25);
    }

    #[test]
    fn derivative_vanishes_far_out() {
        assert!(phi_derivative(20.0, &unit()).abs() < 1e-6);
        assert!(phi_derivative(-20.0, &unit()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_coefficients_rejected() {
        assert!(PhiParams::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(PhiParams::new(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn no_overflow_at_extremes() {
        let p = PhiParams::default();
        for x in [-1e6, -1e3, 1e3, 1e6, f64::MAX / 4.0] {
            let y = phi(x, &p);
            assert!(y.is_finite() && (-1.1..=2.1).contains(&y), "phi({x}) = {y}");
        }
    }

    #[test]
    fn tape_matches_scalar() {
        let act = Activation::default();
        let xs = [-1.3, -0.2, 0.0, 0.4, 2.2];
        let mut tape = Tape::new();
        let x = tape.leaf(crate::ndgrad::Tensor::new([5], xs.to_vec()).unwrap());
        let y = act.record(&mut tape, x, 0).unwrap();
        for (i, &xi) in xs.iter().enumerate() {
            assert!((tape.value(y).data()[i] - act.eval(xi, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let p = PhiParams::new(1.7, -0.3, 2.5, 0.4).unwrap();
        let act = Activation::Phi(p);
        let xs = [-1.1, -0.35, 0.0, 0.6, 1.9];
        let mut tape = Tape::new();
        let x = tape.leaf(crate::ndgrad::Tensor::new([5], xs.to_vec()).unwrap());
        let y = act.record(&mut tape, x, 0).unwrap();
        let loss = tape.mean(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (i, &xi) in xs.iter().enumerate() {
            let fd = (phi(xi + h, &p) - phi(xi - h, &p)) / (2.0 * h) / xs.len() as f64;
            assert!((grads.get(x).unwrap().data()[i] - fd).abs() < 1e-8);
        }
    }
}
