use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    weight_decay: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Adam {
            lr,
            weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. A non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient of {name} is {:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    step: self.t as usize,
                    detail: format!("gradient of {name} is not finite"),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let (lr, wd) = (self.lr, self.weight_decay);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] + wd * *x;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("x", Matrix::column(v));
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(vec![1.0, -2.0]);
        let mut opt = Adam::new(&p, 0.1, 0.0);
        for _ in 0..5 {
            opt.step(&mut p, &[Matrix::zeros(2, 1)]).unwrap();
        }
        assert_eq!(p.values()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = store(vec![0.0]);
        let mut opt = Adam::new(&p, 0.01, 0.0);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            opt.step(&mut p, &[Matrix::column(vec![0.3])]).unwrap();
            let x = p.values()[0].data()[0];
            last_step = prev - x;
            prev = x;
        }
        assert!((last_step - 0.01).abs() < 1e-8, "{last_step}");
    }

    #[test]
    fn weight_decay_shrinks_monotonically() {
        let mut p = store(vec![2.0, -3.0]);
        let mut opt = Adam::new(&p, 0.01, 0.1);
        let mut prev = p.values()[0].clone();
        for _ in 0..100 {
            opt.step(&mut p, &[Matrix::zeros(2, 1)]).unwrap();
            let cur = p.values()[0].clone();
            for (a, b) in cur.data().iter().zip(prev.data()) {
                assert!(a.abs() < b.abs());
            }
            prev = cur;
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = store(vec![1.0]);
        let mut opt = Adam::new(&p, 0.1, 0.0);
        let err = opt
            .step(&mut p, &[Matrix::column(vec![f64::NAN])])
            .unwrap_err();
        assert_eq!(err.code(), "E_NONFINITE");
        assert_eq!(p.values()[0].data(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
