use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{sigmoid, Vec3};
use crate::nn::{prefixed, Mlp, MlpTrace, Parameters};

const BANDS: usize = 4;
pub const ENCODING_DIM: usize = 3 + 6 * BANDS;

/// Direction-only background: sinusoidal encoding of the unit ray direction
/// followed by a small perceptron with logistic output.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub mlp: Mlp,
}

pub fn encode_direction(d: &Vec3) -> [f64; ENCODING_DIM] {
    let mut out = [0.0; ENCODING_DIM];
    out[..3].copy_from_slice(d.as_slice());
    for b in 0..BANDS {
        let f = (1u32 << b) as f64 * std::f64::consts::PI;
        for a in 0..3 {
            out[3 + 6 * b + a] = (f * d[a]).sin();
            out[3 + 6 * b + 3 + a] = (f * d[a]).cos();
        }
    }
    out
}

impl Background {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::new(ENCODING_DIM, hidden, 3, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn color(&self, dir: &Vec3) -> [f64; 3] {
        let o = self.mlp.eval(&encode_direction(dir));
        [sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])]
    }

    pub fn backward(&self, dir: &Vec3, drgb: [f64; 3], grad: &mut Background) {
        let x = encode_direction(dir);
        let mut trace = MlpTrace::default();
        let mut o = [0.0; 3];
        self.mlp.forward(&x, &mut trace, &mut o);
        let dout: Vec<f64> = (0..3)
            .map(|c| {
                let s = sigmoid(o[c]);
                drgb[c] * s * (1.0 - s)
            })
            .collect();
        self.mlp.backward(&x, &trace, &dout, &mut grad.mlp, None);
    }
}

impl Parameters for Background {
    fn sections(&self) -> Vec<(String, &[f64])> {
        prefixed("mlp", self.mlp.sections()).collect()
    }

    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])> {
        prefixed("mlp", self.mlp.sections_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_gray_and_stays_in_range() {
        let mut bg = Background::new(16, 1);
        assert_eq!(bg.color(&Vec3::x()), [0.5; 3]);
        for (i, w) in bg.mlp.w2.iter_mut().enumerate() {
            *w = (i as f64).sin() * 40.0;
        }
        for d in [Vec3::x(), -Vec3::y(), Vec3::new(0.6, 0.0, 0.8)] {
            assert!(bg.color(&d).iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
