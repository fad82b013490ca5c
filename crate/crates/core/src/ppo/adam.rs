use crate::tensor::{ParamSet, Scalar};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<S: Scalar>(params: &ParamSet<S>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads[i]` belongs to parameter `i`;
    /// `None` is treated as a zero gradient.
    pub fn step<S: Scalar>(&mut self, params: &mut ParamSet<S>, grads: &[Option<Vec<f64>>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = params.get_mut(id).data_mut();
            for j in 0..data.len() {
                let g = grads[i].as_ref().map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                data[j] = S::lit(data[j].as_f64() - update);
            }
        }
    }
}

/// Global L2 norm over every gradient.
pub fn global_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales so the global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamSet::<f64>::new();
        p.add("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[Some(vec![3.0, -0.01])], 0.1);
        let d = p.get(p.find("w").unwrap()).data();
        assert!((d[0] - 0.9).abs() < 1e-6 && (d[1] - 1.1).abs() < 1e-5, "{d:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::<f64>::new();
        let id = p.add("w", Tensor::new(vec![1], vec![5.0]).unwrap());
        let mut adam = Adam::new(&p);
        for _ in 0..2000 {
            let w = p.get(id).data()[0];
            adam.step(&mut p, &[Some(vec![2.0 * (w - 2.0)])], 0.05);
        }
        assert!((p.get(id).data()[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Some(vec![3.0, 4.0]), None];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((global_norm(&g) - 0.5).abs() < 1e-12);
        let mut small = vec![Some(vec![0.1])];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small[0].as_ref().unwrap()[0], 0.1);
    }
}
