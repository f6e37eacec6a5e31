//! AdamW with decoupled weight decay, matching the common reference
//! implementation: decay, moment update, bias correction, step.

use crate::nn::Module;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    /// First and second moments, one pair per parameter in visit order.
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            betas,
            eps,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter of `module` from its accumulated
    /// gradients.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = T::lit(self.lr);
        let decay = T::lit(1.0 - self.lr * self.weight_decay);
        let (tb1, tb2) = (T::lit(b1), T::lit(b2));
        let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let step_size = lr / T::lit(bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);

        let first = self.moments.is_empty();
        let moments = &mut self.moments;
        let mut index = 0usize;
        let mut mismatch = false;
        module.visit_params_mut("", &mut |_, p| {
            if first {
                moments.push((vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            }
            let Some((m, v)) = moments.get_mut(index).filter(|(m, _)| m.len() == p.len()) else {
                mismatch = true;
                return;
            };
            index += 1;
            let grads = p.grad.as_slice().expect("standard layout");
            let values = p.value.as_slice_mut().expect("standard layout");
            for (((w, g), m), v) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *m = tb1 * *m + ob1 * *g;
                *v = tb2 * *v + ob2 * *g * *g;
                *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        });
        if mismatch || index != self.moments.len() {
            return Err(Error::Config("optimizer state does not match the module's parameters".into()));
        }
        Ok(())
    }
}
