use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], rate: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(crate::error::shape_err(format!(
                "optimizer holds {} parameters, got {} and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= rate * (mh / (vh.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_rate() {
        // bias-corrected first step is rate * sign(g)
        let mut opt = AdamW::new(3, 0.0);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.3, -4.0, 1e-3], 0.1).unwrap();
        let want = [0.9, -1.9, 0.4];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_rate_keeps_params() {
        let mut opt = AdamW::new(2, 0.01);
        let mut p = vec![1.0, 2.0];
        opt.step(&mut p, &[5.0, -1.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = vec![3.0, -1.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            opt.step(&mut p, &g, 0.05).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut opt = AdamW::new(1, 0.0);
        let mut p = vec![0.0];
        assert!(opt.step(&mut p, &[f64::NAN], 0.1).unwrap_err().is_numerical());
    }
}
