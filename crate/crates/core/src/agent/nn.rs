//! Fully connected network with tanh hidden layers and a linear output.
//!
//! Parameters live in one flat vector: for each layer, the row-major weight
//! matrix (`out x in`) followed by the bias.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of every layer from one forward pass; the first entry is the
/// input and the last the linear output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has an output")
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform weights in `±scale/sqrt(fan_in)`, zero biases. The last layer
    /// is shrunk by `out_scale`.
    pub fn init(sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt() * if l == last { out_scale } else { 1.0 };
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-bound..=bound));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == Self::param_count(&sizes)).then_some(Mlp { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim());
        let mut layers = vec![x.to_vec()];
        let mut off = 0;
        let n = self.sizes.len() - 1;
        for l in 0..n {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let input = &layers[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            off += fan_in * fan_out + fan_out;
            layers.push(out);
        }
        Trace { layers }
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).layers.pop().unwrap()
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient at the linear output.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Vec<f64> {
        let n = self.sizes.len() - 1;
        assert_eq!(grad_out.len(), self.sizes[n]);
        let mut grads = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for l in 0..n {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &trace.layers[l];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = d * x;
                }
                grads[off + fan_in * fan_out + o] = d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wv;
                }
            }
            // Input to layer l is tanh output of layer l-1.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        grads
    }

    /// `params += step * grads`.
    pub fn apply(&mut self, grads: &[f64], step: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p += step * g;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[4, 6, 5, 3], 1.0, &mut rng);
        let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.4).collect();
        let w = [0.5, -1.0, 2.0];
        let loss = |n: &Mlp| n.output(&x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = net.backward(&net.forward(&x), &w);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut p = net.clone();
            p.params[i] += h;
            let up = loss(&p);
            p.params[i] -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999);
        let q = softmax(&[2.0, 2.0]);
        assert_eq!(q, vec![0.5, 0.5]);
    }

    #[test]
    fn param_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 4, 2], 0.1, &mut rng);
        let back = Mlp::from_params(net.sizes().to_vec(), net.params().to_vec()).unwrap();
        assert_eq!(back, net);
        assert!(Mlp::from_params(vec![3, 4, 2], vec![0.0; 5]).is_none());
    }
}
