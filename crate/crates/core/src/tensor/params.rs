use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Mat;
use super::Scalar;

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Mat<F>>,
    by_name: BTreeMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<F>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<F>)> {
        self.values.iter().enumerate().map(move |(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn zeros_like(&self) -> Grads<F> {
        Grads { mats: self.values.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect() }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Mat::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// True when every tensor is bit-identical.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits()))
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<F> {
    pub(crate) mats: Vec<Mat<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.mats[id.0]
    }

    pub fn global_norm(&self) -> F {
        self.mats.iter().map(Mat::sq_norm).sum::<F>().sqrt()
    }

    pub fn scale(&mut self, s: F) {
        self.mats.iter_mut().for_each(|m| m.scale_in_place(s));
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat<F>)> {
        self.mats.iter().enumerate().map(|(i, m)| (ParamId(i), m))
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(Mat::all_finite)
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut Grads<F>, max_norm: F) -> F {
    let norm = grads.global_norm();
    if norm > max_norm && norm > F::zero() {
        grads.scale(max_norm / norm);
    }
    norm
}

pub fn normal_mat<F: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat<F> {
    Mat::from_fn(rows, cols, |_, _| F::lit(rng.sample::<f64, _>(StandardNormal) * std))
}

/// Fan-in scaled normal initialisation for a `fan_in × fan_out` weight.
pub fn init_linear<F: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat<F> {
    normal_mat(rng, fan_in, fan_out, 1.0 / (fan_in.max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_to_exact_norm() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Mat::zeros(1, 2));
        let mut g = store.zeros_like();
        g.get_mut(ParamId(0)).data_mut().copy_from_slice(&[3.0, 4.0]);
        let pre = clip_global_norm(&mut g, 0.5);
        assert_eq!(pre, 5.0);
        assert!((g.global_norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clip_leaves_small_gradients() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Mat::zeros(1, 1));
        let mut g = store.zeros_like();
        g.get_mut(ParamId(0)).data_mut()[0] = 0.25;
        clip_global_norm(&mut g, 0.5);
        assert_eq!(g.get(ParamId(0)).data()[0], 0.25);
    }
}
