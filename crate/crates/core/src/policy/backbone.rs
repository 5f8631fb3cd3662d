use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Observation;
use crate::error::{Error, Result};
use crate::tensor::{normal_mat, Mat, Scalar};

/// Frozen random linear patch projection standing in for a pretrained vision
/// backbone. Its weights live outside the trainable parameter set.
#[derive(Clone, Debug)]
pub struct FrozenPatchEncoder<F> {
    patch: usize,
    channels: usize,
    weight: Mat<F>,
    bias: Mat<F>,
}

impl<F: Scalar> FrozenPatchEncoder<F> {
    pub fn new(patch: usize, channels: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = patch * patch * channels;
        // Typical patches are mostly one-hot floor/wall pixels; scale by the
        // pixel count rather than the raw fan-in.
        let weight = normal_mat(&mut rng, fan_in, width, 1.0 / ((patch * patch) as f64).sqrt());
        let bias = normal_mat(&mut rng, 1, width, 0.1);
        Self { patch, channels, weight, bias }
    }

    pub fn width(&self) -> usize {
        self.weight.cols()
    }

    pub fn bias(&self) -> &Mat<F> {
        &self.bias
    }

    pub fn num_tokens(&self, obs: &Observation) -> usize {
        (obs.height() / self.patch) * (obs.width() / self.patch)
    }

    /// `ℓ × h` patch tokens; zero pixels are skipped.
    pub fn encode(&self, obs: &Observation) -> Result<Mat<F>> {
        let p = self.patch;
        if obs.height() % p != 0 || obs.width() % p != 0 || obs.channels() != self.channels {
            return Err(Error::Config(format!(
                "observation {}x{}x{} incompatible with patch {p} and {} channels",
                obs.height(),
                obs.width(),
                obs.channels(),
                self.channels
            )));
        }
        let (gh, gw) = (obs.height() / p, obs.width() / p);
        let width = self.width();
        let mut out = Mat::zeros(gh * gw, width);
        for py in 0..gh {
            for px in 0..gw {
                let token = py * gw + px;
                let row = out.row_mut(token);
                row.copy_from_slice(self.bias.row(0));
                for dy in 0..p {
                    for dx in 0..p {
                        let pixel = obs.pixel(py * p + dy, px * p + dx);
                        for (c, &v) in pixel.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let v = F::lit(v as f64);
                            let w = self.weight.row((dy * p + dx) * self.channels + c);
                            for (o, &wv) in row.iter_mut().zip(w) {
                                *o = *o + v * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_observation_yields_bias_rows() {
        let enc = FrozenPatchEncoder::<f64>::new(14, 7, 12, 3);
        let obs = Observation::zeros(56, 56, 7);
        let r = enc.encode(&obs).unwrap();
        assert_eq!(r.shape(), (16, 12));
        for t in 0..16 {
            assert_eq!(r.row(t), enc.bias().row(0));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let mut obs = Observation::zeros(28, 28, 3);
        obs.paint(3, 20, Some(1));
        let a = FrozenPatchEncoder::<f32>::new(14, 3, 8, 9).encode(&obs).unwrap();
        let b = FrozenPatchEncoder::<f32>::new(14, 3, 8, 9).encode(&obs).unwrap();
        assert_eq!(a, b);
        let c = FrozenPatchEncoder::<f32>::new(14, 3, 8, 10).encode(&obs).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let enc = FrozenPatchEncoder::<f32>::new(14, 3, 8, 9);
        let obs = Observation::zeros(30, 28, 3);
        assert!(matches!(enc.encode(&obs), Err(Error::Config(_))));
    }
}
