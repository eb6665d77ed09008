use crate::nn::{Gradients, ParamStore, Tensor};

/// Linear warmup to `peak` over `warmup` steps, then decay with the inverse
/// square root of the step number. Steps count from 1.
pub fn inverse_sqrt_lr(peak: f64, warmup: usize, step: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup as f64;
    if step < warmup {
        peak * step / warmup
    } else {
        peak * (warmup.max(1.0) / step).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update with learning rate `lr`. Parameters without
    /// a gradient still decay their moments as if the gradient were zero.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;

    #[test]
    fn schedule_peaks_at_warmup() {
        assert_eq!(inverse_sqrt_lr(1.0, 4, 2), 0.5);
        assert_eq!(inverse_sqrt_lr(1.0, 4, 4), 1.0);
        assert_eq!(inverse_sqrt_lr(1.0, 4, 16), 0.5);
        assert_eq!(inverse_sqrt_lr(2.0, 0, 4), 1.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(1, 2, vec![1.0, -1.0]));
        let mut g = Gradients::zeros_like(&p);
        g.accumulate(ParamId(0), &Tensor::from_vec(1, 2, vec![3.0, -0.5]));
        let mut adam = Adam::new(&p, 0.9, 0.98, 1e-9);
        adam.update(&mut p, &g, 0.1);
        let w = p.by_name("w").unwrap();
        assert!((w.get(0, 0) - 0.9).abs() < 1e-8);
        assert!((w.get(0, 1) + 0.9).abs() < 1e-8);
    }
}
