//! Gradient-ascent schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Adam; with `linear_decay` the rate falls linearly to 0 over the run.
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        linear_decay: bool,
    },
    /// Plain ascent with `rho_t = a / (t + b)^kappa`.
    RobbinsMonro { a: f64, b: f64, kappa: f64 },
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, linear_decay: bool) -> Self {
        Self::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            linear_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                learning_rate > 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && epsilon > 0.0
            }
            Self::RobbinsMonro { a, b, kappa } => a > 0.0 && b >= 0.0 && kappa > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(0.01, true)
    }
}

/// Moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moves `x` uphill along `grad`; `horizon` is the planned number of steps.
    pub fn ascend(&mut self, config: &OptimizerConfig, horizon: usize, x: &mut [f64], grad: &[f64]) {
        self.ascend_recording(config, horizon, x, grad, None);
    }

    /// As `ascend`, also writing each coordinate's effective step size (the
    /// factor multiplying its first-moment estimate) into `steps`.
    pub fn ascend_recording(
        &mut self,
        config: &OptimizerConfig,
        horizon: usize,
        x: &mut [f64],
        grad: &[f64],
        mut steps: Option<&mut [f64]>,
    ) {
        let t = self.t;
        self.t += 1;
        match *config {
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                linear_decay,
            } => {
                let rate = if linear_decay {
                    learning_rate * (1.0 - t as f64 / horizon.max(1) as f64).max(0.0)
                } else {
                    learning_rate
                };
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for k in 0..x.len() {
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * grad[k];
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                    let step = rate / ((self.v[k] / c2).sqrt() + epsilon);
                    x[k] += step * self.m[k] / c1;
                    if let Some(s) = steps.as_deref_mut() {
                        s[k] = step;
                    }
                }
            }
            OptimizerConfig::RobbinsMonro { a, b, kappa } => {
                let rho = a / (t as f64 + b).powf(kappa);
                for (xi, g) in x.iter_mut().zip(grad) {
                    *xi += rho * g;
                }
                if let Some(s) = steps {
                    s.fill(rho);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_has_learning_rate_size() {
        let mut st = OptimizerState::new(2);
        let mut x = [0.0, 0.0];
        st.ascend(&OptimizerConfig::adam(0.01, false), 10, &mut x, &[5.0, -0.2]);
        assert!((x[0] - 0.01).abs() < 1e-9 && (x[1] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn decay_reaches_zero() {
        let cfg = OptimizerConfig::adam(0.01, true);
        let mut st = OptimizerState::new(1);
        let mut x = [0.0];
        for _ in 0..9 {
            st.ascend(&cfg, 10, &mut x, &[1.0]);
        }
        let before = x[0];
        st.ascend(&cfg, 10, &mut x, &[1.0]);
        // last step uses rate 0.01 * (1 - 9/10)
        assert!((x[0] - before - 0.001).abs() < 1e-9);
    }

    #[test]
    fn robbins_monro_solves_quadratic() {
        let cfg = OptimizerConfig::RobbinsMonro { a: 2.0, b: 3.0, kappa: 1.0 };
        let mut st = OptimizerState::new(1);
        let mut x = [0.0];
        for _ in 0..2000 {
            let g = [3.0 - x[0]];
            st.ascend(&cfg, 2000, &mut x, &g);
        }
        assert!((x[0] - 3.0).abs() < 1e-3);
    }
}
