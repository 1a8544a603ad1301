use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update at timestep `t` (1-based).
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut Moments, t: u64, p: AdamParams) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("Adam timestep starts at 1".into()));
    }
    if param.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::shape(format!("{} parameters, {} gradients", param.len(), grad.len())));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric { node: format!("gradient entry {i}"), message: "non-finite gradient".into() });
    }
    let c1 = 1.0 - p.beta1.powi(t as i32);
    let c2 = 1.0 - p.beta2.powi(t as i32);
    for (((w, g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = p.beta1 * *m + (1.0 - p.beta1) * g;
        *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
    }
    Ok(())
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: AdamParams = AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    #[test]
    fn first_step_matches_hand_computation() {
        let mut w = [0.0];
        let mut s = Moments::zeros(1);
        adam_step(&mut w, &[1.0], &mut s, 1, P).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        assert_eq!(w[0], -0.001 / (1.0 + 1e-8));
        assert!((w[0] + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_still() {
        let mut w = [0.3, -2.0];
        let mut s = Moments::zeros(2);
        adam_step(&mut w, &[0.0, 0.0], &mut s, 1, P).unwrap();
        assert_eq!(w, [0.3, -2.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut w = [0.0];
        let mut s = Moments::zeros(1);
        assert!(matches!(adam_step(&mut w, &[f64::NAN], &mut s, 1, P), Err(Error::Numeric { .. })));
        assert!(adam_step(&mut w, &[1.0], &mut s, 0, P).is_err());
    }

    #[test]
    fn clipping() {
        let (mut a, mut b) = (vec![3.0], vec![4.0]);
        let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
    }
}
