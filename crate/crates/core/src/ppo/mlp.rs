//! Fully connected tanh network with hand-written backpropagation.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Layers `sizes[0] → sizes[1] → … → sizes[n]`, tanh on hidden layers and a
/// linear output. Parameters are stored flat, layer by layer, each layer as a
/// row-major `out × in` weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass: the input, every hidden layer after
/// tanh, and the linear output.
pub type Activations = Vec<Vec<f64>>;

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Orthogonal initialization: gain `hidden_gain` on hidden layers and
    /// `output_gain` on the last one, zero biases.
    pub fn new(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l + 1 == layers { output_gain } else { hidden_gain };
            let weights = orthogonal(fan_out, fan_in, rng);
            params.extend(weights.iter().map(|v| v * gain));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts);
        acts.pop().expect("output layer")
    }

    /// Forward pass that keeps every layer's activations for `backward`.
    pub fn forward_cached(&self, x: &[f64], acts: &mut Activations) {
        debug_assert_eq!(x.len(), self.input_size());
        acts.clear();
        acts.push(x.to_vec());
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l + 1 < layers { z.tanh() } else { z });
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
    }

    /// Accumulates `∂(dout · output)/∂params` into `grad`.
    pub fn backward(&self, acts: &Activations, dout: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}

/// A `rows × cols` matrix with orthonormal rows or columns, row-major.
fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (r, c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn orthogonal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(4, 3), (3, 4), (5, 5)] {
            let m = DMatrix::from_row_slice(r, c, &orthogonal(r, c, &mut rng));
            let g = if r >= c { m.transpose() * &m } else { &m * m.transpose() };
            let n = g.nrows();
            assert!((g - DMatrix::<f64>::identity(n, n)).amax() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 4, 4, 2], 1.0, 1.0, &mut rng);
        for p in net.params.iter_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let x = [0.3, -0.7, 1.1];
        let dout = [0.4, -1.3];
        let mut acts = Vec::new();
        net.forward_cached(&x, &mut acts);
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&acts, &dout, &mut grad);
        let f = |n: &Mlp| n.forward(&x).iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..net.params.len() {
            let h = 1e-6;
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = f(&net);
            net.params[i] = orig - h;
            let down = f(&net);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
