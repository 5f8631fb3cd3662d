use crate::error::{Error, Result};
use crate::tensor::{Grads, Mat, ParamStore, Scalar};

/// Adaptive moment estimation with bias correction and a constant step size.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) t: u64,
    pub(crate) m: Vec<Mat<F>>,
    pub(crate) v: Vec<Mat<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamStore<F>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Grads<F>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Internal(format!("optimizer tracks {} tensors, model has {}", self.m.len(), params.len())));
        }
        self.t += 1;
        let b1 = F::lit(self.beta1);
        let b2 = F::lit(self.beta2);
        let c1 = F::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = F::lit(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::lit(self.lr);
        let eps = F::lit(self.eps);
        let one = F::one();
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = ParamStore::<f64>::new();
        let id = p.add("w", Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let mut opt = Adam::new(&p, 0.1, 0.9, 0.999, 1e-8);
        let mut g = p.zeros_like();
        *g.get_mut(id) = Mat::from_vec(1, 3, vec![0.5, -2.0, 0.0]);
        opt.step(&mut p, &g).unwrap();
        let w = p.get(id);
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) - 2.1).abs() < 1e-6);
        assert_eq!(w.get(0, 2), 3.0);
    }
}
