//! Adam optimizer over a [`ParamSet`].

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new<P: ParamSet<F>>(lr: f64, params: &P) -> Self {
        let zeros: Vec<Vec<F>> = params.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect();
        Self {
            lr: F::lit(lr),
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update, `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update<P: ParamSet<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != self.m.len() || g.len() != p.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.step as i32);
        let bc2 = one - self.beta2.powi(self.step as i32);
        for (k, (pt, gt)) in p.iter_mut().zip(&g).enumerate() {
            if pt.len() != gt.len() || pt.len() != self.m[k].len() {
                return Err(Error::Shape(format!("tensor {k} length mismatch")));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..pt.len() {
                let gi = gt[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                pt[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<F: Scalar, P: ParamSet<F>>(grads: &P) -> F {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&g| g * g)
        .sum::<F>()
        .sqrt()
}

/// Rescales `grads` so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar, P: ParamSet<F>>(grads: &mut P, max_norm: F) -> F {
    let n = grad_norm(grads);
    if n > max_norm && n > F::zero() {
        let s = max_norm / n;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
    n
}

/// Accumulates `src` into `dst` element-wise.
pub fn accumulate<F: Scalar, P: ParamSet<F>>(dst: &mut P, src: &P) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        d.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
    }
}
