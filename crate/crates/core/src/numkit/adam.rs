use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<P: Params + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes = params.shapes();
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one descent step. Refuses (leaving parameters untouched) if any
    /// gradient entry is NaN or infinite.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &Grads) -> Result<()> {
        assert_eq!(grads.0.len(), self.m.len(), "gradient tensor count mismatch");
        for (ti, g) in grads.0.iter().enumerate() {
            if let Some(idx) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { tensor: ti, index: idx });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (ti, p) in params.tensors_mut().into_iter().enumerate() {
            let g = &grads.0[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Vector(Vec<f64>);
    impl Params for Vector {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut p = Vector(vec![1.0, -1.0]);
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.1, ..Default::default() });
        opt.step(&mut p, &Grads(vec![vec![3.0, -0.01]])).unwrap();
        assert!((p.0[0] - 0.9).abs() < 1e-6);
        assert!((p.0[1] + 0.9).abs() < 1e-4);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Vector(vec![5.0]);
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let g = Grads(vec![vec![2.0 * (p.0[0] - 1.5)]]);
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p.0[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_nan_gradient_without_touching_parameters() {
        let mut p = Vector(vec![1.0, 2.0]);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &Grads(vec![vec![0.0, f64::NAN]])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { tensor: 0, index: 1 }));
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(opt.steps(), 0);
    }
}
