//! Two-layer perceptrons with hand-written reverse mode, and the parameter
//! section interface shared by every trainable component.

use rand::Rng;

use crate::math::{sigmoid, softplus};

/// Named flat parameter arrays, visited in a fixed order.
pub trait Parameters {
    fn sections(&self) -> Vec<(String, &[f64])>;
    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn parameter_count(&self) -> usize {
        self.sections().iter().map(|(_, s)| s.len()).sum()
    }

    fn zero(&mut self) {
        for (_, s) in self.sections_mut() {
            s.fill(0.0);
        }
    }
}

/// `input → hidden (softplus) → output (linear)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// Row-major `hidden × input`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `output × hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

impl Mlp {
    /// Uniform Glorot init for the first layer; the output layer starts at zero.
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let lim = (6.0 / (input + hidden) as f64).sqrt();
        Self {
            input,
            hidden,
            output,
            w1: (0..hidden * input).map(|_| rng.random_range(-lim..lim)).collect(),
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input,
            hidden: self.hidden,
            output: self.output,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn forward(&self, x: &[f64], trace: &mut MlpTrace, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        trace.pre.resize(self.hidden, 0.0);
        trace.act.resize(self.hidden, 0.0);
        for h in 0..self.hidden {
            let row = &self.w1[h * self.input..(h + 1) * self.input];
            let z = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            trace.pre[h] = z;
            trace.act[h] = softplus(z);
        }
        for o in 0..self.output {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            out[o] = self.b2[o] + row.iter().zip(&trace.act).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output];
        self.forward(x, &mut MlpTrace::default(), &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and, if given, input gradients into `dx`.
    pub fn backward(&self, x: &[f64], trace: &MlpTrace, dout: &[f64], grad: &mut Mlp, dx: Option<&mut [f64]>) {
        let mut dhidden = vec![0.0; self.hidden];
        for o in 0..self.output {
            let g = dout[o];
            if g == 0.0 {
                continue;
            }
            grad.b2[o] += g;
            let base = o * self.hidden;
            for h in 0..self.hidden {
                grad.w2[base + h] += g * trace.act[h];
                dhidden[h] += g * self.w2[base + h];
            }
        }
        let mut dx = dx;
        for h in 0..self.hidden {
            let dz = dhidden[h] * sigmoid(trace.pre[h]);
            if dz == 0.0 {
                continue;
            }
            grad.b1[h] += dz;
            let base = h * self.input;
            for i in 0..self.input {
                grad.w1[base + i] += dz * x[i];
            }
            if let Some(dx) = dx.as_deref_mut() {
                for i in 0..self.input {
                    dx[i] += dz * self.w1[base + i];
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }
}

impl Parameters for Mlp {
    fn sections(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w1".into(), &self.w1[..]),
            ("b1".into(), &self.b1[..]),
            ("w2".into(), &self.w2[..]),
            ("b2".into(), &self.b2[..]),
        ]
    }

    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w1".into(), &mut self.w1[..]),
            ("b1".into(), &mut self.b1[..]),
            ("w2".into(), &mut self.w2[..]),
            ("b2".into(), &mut self.b2[..]),
        ]
    }
}

/// Prefixes section names, e.g. `decoder.w1`.
pub fn prefixed<'a, T>(prefix: &str, v: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_string();
    v.into_iter().map(move |(n, s)| (format!("{prefix}.{n}"), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(5, 7, 3, &mut rng);
        for w in &mut mlp.w2 {
            *w = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let dout = [0.7, -1.3, 0.4];
        let loss = |m: &Mlp, x: &[f64]| m.eval(x).iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>();

        let mut trace = MlpTrace::default();
        let mut out = vec![0.0; 3];
        mlp.forward(&x, &mut trace, &mut out);
        let mut grad = mlp.zeros_like();
        let mut dx = vec![0.0; 5];
        mlp.backward(&x, &trace, &dout, &mut grad, Some(&mut dx));

        let h = 1e-6;
        for k in 0..mlp.w1.len() {
            let mut p = mlp.clone();
            p.w1[k] += h;
            let mut m = mlp.clone();
            m.w1[k] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.w1[k]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        for i in 0..5 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(3, 8, 2, &mut rng);
        assert_eq!(mlp.eval(&[0.1, 0.2, 0.3]), vec![0.0, 0.0]);
    }
}
