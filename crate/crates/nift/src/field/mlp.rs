//! Dense multilayer perceptron over flat `f64` parameter storage, with
//! hand-written reverse-mode differentiation. Flat storage keeps the
//! optimizer and the on-disk format trivial; the layouts are row-major
//! weight blocks followed by bias blocks, layer by layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    acts: Vec<Activation>,
    params: Vec<f64>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
}

/// Post-activation values of every layer for one forward pass;
/// `posts[0]` is the input, `posts[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub posts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.posts.last().expect("cache always holds the input")
    }
}

impl Mlp {
    /// Zero-initialized network; `acts.len()` must be `dims.len() - 1`.
    pub fn new(dims: &[usize], acts: &[Activation]) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        assert_eq!(acts.len(), dims.len() - 1);
        assert!(dims.iter().all(|&d| d > 0));
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut off = 0usize;
        for l in 0..acts.len() {
            w_off.push(off);
            off += dims[l] * dims[l + 1];
            b_off.push(off);
            off += dims[l + 1];
        }
        Self { dims: dims.to_vec(), acts: acts.to_vec(), params: vec![0.0; off], w_off, b_off }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&mut self, rng: &mut impl Rng) {
        for l in 0..self.acts.len() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut self.params[self.w_off[l]..self.w_off[l] + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
            for b in &mut self.params[self.b_off[l]..self.b_off[l] + fan_out] {
                *b = 0.0;
            }
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn acts(&self) -> &[Activation] {
        &self.acts
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.acts.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Total width of all layer outputs concatenated.
    pub fn concat_len(&self) -> usize {
        self.dims[1..].iter().sum()
    }

    pub fn forward(&self, x: &[f64]) -> MlpCache {
        assert_eq!(x.len(), self.in_dim());
        let mut posts = Vec::with_capacity(self.acts.len() + 1);
        posts.push(x.to_vec());
        for l in 0..self.acts.len() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = &posts[l];
            let mut out = vec![0.0f64; n_out];
            for o in 0..n_out {
                let row = &self.params[self.w_off[l] + o * n_in..self.w_off[l] + (o + 1) * n_in];
                let mut acc = self.params[self.b_off[l] + o];
                for (w, v) in row.iter().zip(input) {
                    acc += w * v;
                }
                out[o] = match self.acts[l] {
                    Activation::Tanh => acc.tanh(),
                    Activation::Linear => acc,
                };
            }
            posts.push(out);
        }
        MlpCache { posts }
    }

    /// All layer outputs of a cached pass, concatenated in layer order.
    pub fn concat_outputs(&self, cache: &MlpCache) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.concat_len());
        for p in &cache.posts[1..] {
            out.extend_from_slice(p);
        }
        out
    }

    /// Reverse pass with one cotangent per layer output (`cots[l]` pairs with
    /// `posts[l + 1]`; an empty slice means no contribution). Accumulates
    /// parameter gradients into `grads` and returns the input gradient.
    pub fn backward_all(&self, cache: &MlpCache, cots: &[&[f64]], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(cots.len(), self.acts.len());
        assert_eq!(grads.len(), self.params.len());
        let last = self.acts.len() - 1;
        let mut g: Vec<f64> = vec![0.0; self.out_dim()];
        add_cot(&mut g, cots[last]);
        for l in (0..self.acts.len()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let post = &cache.posts[l + 1];
            // Activation derivative from the post value: tanh' = 1 - a^2.
            if self.acts[l] == Activation::Tanh {
                for (gi, a) in g.iter_mut().zip(post) {
                    *gi *= 1.0 - a * a;
                }
            }
            let input = &cache.posts[l];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                grads[self.b_off[l] + o] += go;
                let wrow = self.w_off[l] + o * n_in;
                for (i, v) in input.iter().enumerate() {
                    grads[wrow + i] += go * v;
                }
            }
            let mut g_prev = vec![0.0f64; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = &self.params[self.w_off[l] + o * n_in..self.w_off[l] + (o + 1) * n_in];
                for (gp, w) in g_prev.iter_mut().zip(row) {
                    *gp += go * w;
                }
            }
            if l > 0 {
                add_cot(&mut g_prev, cots[l - 1]);
            }
            g = g_prev;
        }
        g
    }

    /// Reverse pass seeded only at the final output.
    pub fn backward(&self, cache: &MlpCache, cot: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut cots: Vec<&[f64]> = vec![&[]; self.acts.len()];
        cots[self.acts.len() - 1] = cot;
        self.backward_all(cache, &cots, grads)
    }

    /// Rewrites the final linear layer so the network computes
    /// `scale .* old_output + shift`. Used to fold target standardization
    /// back into the weights once training is done.
    pub fn affine_fold_output(&mut self, scale: &[f64], shift: &[f64]) {
        let last = self.acts.len() - 1;
        assert_eq!(self.acts[last], Activation::Linear, "can only fold into a linear head");
        let (n_in, n_out) = (self.dims[last], self.dims[last + 1]);
        assert_eq!(scale.len(), n_out);
        assert_eq!(shift.len(), n_out);
        for o in 0..n_out {
            for w in &mut self.params[self.w_off[last] + o * n_in..self.w_off[last] + (o + 1) * n_in]
            {
                *w *= scale[o];
            }
            let b = &mut self.params[self.b_off[last] + o];
            *b = *b * scale[o] + shift[o];
        }
    }

    /// Input gradient only, skipping parameter accumulation. Used on the hot
    /// path of pose optimization where weights are frozen.
    pub fn input_grad_all(&self, cache: &MlpCache, cots: &[&[f64]]) -> Vec<f64> {
        assert_eq!(cots.len(), self.acts.len());
        let last = self.acts.len() - 1;
        let mut g: Vec<f64> = vec![0.0; self.out_dim()];
        add_cot(&mut g, cots[last]);
        for l in (0..self.acts.len()).rev() {
            let (n_in, _n_out) = (self.dims[l], self.dims[l + 1]);
            let post = &cache.posts[l + 1];
            if self.acts[l] == Activation::Tanh {
                for (gi, a) in g.iter_mut().zip(post) {
                    *gi *= 1.0 - a * a;
                }
            }
            let mut g_prev = vec![0.0f64; n_in];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &self.params[self.w_off[l] + o * n_in..self.w_off[l] + (o + 1) * n_in];
                for (gp, w) in g_prev.iter_mut().zip(row) {
                    *gp += go * w;
                }
            }
            if l > 0 {
                add_cot(&mut g_prev, cots[l - 1]);
            }
            g = g_prev;
        }
        g
    }
}

fn add_cot(g: &mut [f64], cot: &[f64]) {
    if cot.is_empty() {
        return;
    }
    assert_eq!(cot.len(), g.len());
    for (gi, c) in g.iter_mut().zip(cot) {
        *gi += c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn test_net(seed: u64) -> Mlp {
        let mut net = Mlp::new(&[3, 5, 4, 2], &[Activation::Tanh, Activation::Tanh, Activation::Linear]);
        net.init(&mut rng_from_seed(seed));
        net
    }

    fn scalar_loss(net: &Mlp, x: &[f64], cot: &[f64]) -> f64 {
        net.forward(x).output().iter().zip(cot).map(|(o, c)| o * c).sum()
    }

    #[test]
    fn layout_and_shapes() {
        let net = test_net(1);
        assert_eq!(net.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(net.concat_len(), 11);
        let cache = net.forward(&[0.1, -0.2, 0.3]);
        assert_eq!(cache.posts.len(), 4);
        assert_eq!(net.concat_outputs(&cache).len(), 11);
    }

    #[test]
    fn deterministic_init() {
        assert_eq!(test_net(7).params(), test_net(7).params());
        assert_ne!(test_net(7).params(), test_net(8).params());
    }

    // Central finite differences validate both parameter and input gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let mut net = test_net(3);
        let x = [0.4, -0.7, 0.2];
        let cot = [1.3, -0.8];
        let cache = net.forward(&x);
        let mut grads = vec![0.0; net.param_count()];
        let gx = net.backward(&cache, &cot, &mut grads);

        let h = 1e-6;
        for p in 0..net.param_count() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up = scalar_loss(&net, &x, &cot);
            net.params_mut()[p] = orig - h;
            let dn = scalar_loss(&net, &x, &cot);
            net.params_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (grads[p] - fd).abs() <= 1e-7 + 1e-6 * fd.abs(),
                "param {p}: analytic {} vs fd {fd}",
                grads[p]
            );
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let up = scalar_loss(&net, &xp, &cot);
            xp[i] = x[i] - h;
            let dn = scalar_loss(&net, &xp, &cot);
            let fd = (up - dn) / (2.0 * h);
            assert!((gx[i] - fd).abs() <= 1e-7 + 1e-6 * fd.abs());
        }
    }

    // Seeding every layer at once must equal the sum of per-layer passes.
    #[test]
    fn multi_cotangent_is_linear() {
        let net = test_net(5);
        let x = [0.3, 0.1, -0.5];
        let cache = net.forward(&x);
        let c0 = vec![0.2; 5];
        let c1 = vec![-0.4; 4];
        let c2 = vec![0.7; 2];

        let mut g_all = vec![0.0; net.param_count()];
        let gx_all = net.backward_all(&cache, &[&c0, &c1, &c2], &mut g_all);

        let mut g_sum = vec![0.0; net.param_count()];
        let mut gx_sum = vec![0.0; 3];
        for (l, c) in [(0usize, &c0), (1, &c1), (2, &c2)] {
            let mut cots: Vec<&[f64]> = vec![&[]; 3];
            cots[l] = c;
            let gx = net.backward_all(&cache, &cots, &mut g_sum);
            for (s, v) in gx_sum.iter_mut().zip(gx) {
                *s += v;
            }
        }
        for (a, b) in g_all.iter().zip(&g_sum) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in gx_all.iter().zip(&gx_sum) {
            assert!((a - b).abs() < 1e-12);
        }
        // The parameter-free path must agree exactly.
        let gx_fast = net.input_grad_all(&cache, &[&c0, &c1, &c2]);
        assert_eq!(gx_all, gx_fast);
    }

    #[test]
    fn affine_fold_reproduces_scaled_outputs() {
        let mut net = test_net(21);
        let x = [0.2, -0.4, 0.6];
        let before = net.forward(&x).output().to_vec();
        let scale = [2.0, -0.5];
        let shift = [1.0, 3.0];
        net.affine_fold_output(&scale, &shift);
        let after = net.forward(&x).output().to_vec();
        for i in 0..2 {
            let want = scale[i] * before[i] + shift[i];
            assert!((after[i] - want).abs() < 1e-12);
        }
    }

    // FD check for a cotangent on a hidden layer (the descriptor path).
    #[test]
    fn hidden_layer_cotangent_matches_finite_differences() {
        let mut net = test_net(9);
        let x = [0.25, 0.5, -0.1];
        let c_hidden = [0.9, -0.3, 0.4, 0.2];
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            let cache = net.forward(x);
            cache.posts[2].iter().zip(&c_hidden).map(|(o, c)| o * c).sum()
        };
        let cache = net.forward(&x);
        let cots: Vec<&[f64]> = vec![&[], &c_hidden, &[]];
        let mut grads = vec![0.0; net.param_count()];
        let gx = net.backward_all(&cache, &cots, &mut grads);

        let h = 1e-6;
        for p in (0..net.param_count()).step_by(7) {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up = loss(&net, &x);
            net.params_mut()[p] = orig - h;
            let dn = loss(&net, &x);
            net.params_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((grads[p] - fd).abs() <= 1e-7 + 1e-6 * fd.abs());
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let up = loss(&net, &xp);
            xp[i] = x[i] - h;
            let dn = loss(&net, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!((gx[i] - fd).abs() <= 1e-7 + 1e-6 * fd.abs());
        }
    }
}
