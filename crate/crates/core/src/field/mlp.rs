use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn random<R: Rng>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let weights = (0..inputs * outputs)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        DenseLayer {
            inputs,
            outputs,
            weights,
            biases: vec![0.0; outputs],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.biases.len() == self.outputs
    }
}

/// ReLU network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `input -> hidden -> hidden -> output`; hidden layers drawn from
    /// `N(0, scale^2)`, output layer and all biases zero.
    pub fn new<R: Rng>(
        input: usize,
        hidden: usize,
        output: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Mlp {
            layers: vec![
                DenseLayer::random(input, hidden, scale, rng),
                DenseLayer::random(hidden, hidden, scale, rng),
                DenseLayer::zeros(hidden, output),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.iter().all(DenseLayer::is_consistent)
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts)
    }

    /// Forward pass keeping every layer input in `acts` for [`Mlp::backward`].
    pub(crate) fn forward_cached(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&acts[l], &mut out);
            if l < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
                acts.push(out.clone());
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` (layout: per layer, weights
    /// then biases) and returns the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        acts: &[Vec<f64>],
        grad_out: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.parameter_count();
        }
        let mut upstream = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            let (gw, rest) = grad[offsets[l]..].split_at_mut(layer.weights.len());
            let gb = &mut rest[..layer.outputs];
            let mut down = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let g = upstream[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = o * layer.inputs;
                for i in 0..layer.inputs {
                    gw[row + i] += g * input[i];
                    down[i] += g * layer.weights[row + i];
                }
            }
            if l > 0 {
                // input of layer l is relu output of layer l-1
                for (d, a) in down.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            upstream = down;
        }
        upstream
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
    }

    pub(crate) fn assign_from(&mut self, values: &[f64]) {
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&values[off..off + nw]);
            off += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mlp(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::new(4, 6, 2, 0.7, &mut rng);
        for layer in &mut mlp.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-1.0..1.0);
            }
        }
        mlp
    }

    #[test]
    fn fresh_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(5, 8, 2, 1e-2, &mut rng);
        assert_eq!(mlp.forward(&[1.0, -2.0, 0.5, 3.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(mlp.parameter_count(), 5 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut mlp = random_mlp(11);
        let x = [0.3, -0.7, 1.1, 0.2];
        let gout = [0.6, -1.3];
        let loss = |m: &Mlp, x: &[f64]| {
            let y = m.forward(x);
            y[0] * gout[0] + y[1] * gout[1]
        };
        let mut acts = Vec::new();
        mlp.forward_cached(&x, &mut acts);
        let mut grad = vec![0.0; mlp.parameter_count()];
        let gin = mlp.backward(&acts, &gout, &mut grad);

        let mut flat = Vec::new();
        mlp.flatten_into(&mut flat);
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            mlp.assign_from(&p);
            let up = loss(&mlp, &x);
            p[k] -= 2.0 * h;
            mlp.assign_from(&p);
            let dn = loss(&mlp, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-7,
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
        mlp.assign_from(&flat);
        for i in 0..x.len() {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn flatten_assign_roundtrip() {
        let mlp = random_mlp(5);
        let mut flat = Vec::new();
        mlp.flatten_into(&mut flat);
        let mut other = Mlp {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
        };
        other.assign_from(&flat);
        assert_eq!(other, mlp);
    }
}
